#include "artifact_store.hpp"

#include <cstdio>

#include "gestinv/motion_io.hpp"

namespace gestinv::service {

namespace fs = std::filesystem;

namespace {

// Ids are used as file stems, so only a plain charset is accepted on lookup.
bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

ArtifactStore::ArtifactStore(fs::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  for (const char* sub : {"motions", "noise", "checkpoints"}) fs::create_directories(dir_ / sub);
}

std::string ArtifactStore::next_id(const char* prefix, const char* subdir, const char* ext) {
  while (true) {
    char id[32];
    std::snprintf(id, sizeof id, "%s-%06llu", prefix, static_cast<unsigned long long>(counter_++));
    if (dir_.empty() || !fs::exists(dir_ / subdir / (std::string(id) + ext))) return id;
  }
}

std::optional<fs::path> ArtifactStore::on_disk(const char* subdir, const std::string& id,
                                               const char* ext) const {
  if (dir_.empty() || !safe_id(id)) return std::nullopt;
  auto p = dir_ / subdir / (id + ext);
  if (!fs::is_regular_file(p)) return std::nullopt;
  return p;
}

std::string ArtifactStore::put_motion(MotionSequence motion) {
  std::lock_guard lock(mu_);
  auto id = next_id("m", "motions", ".gmo");
  if (!dir_.empty()) save_motion(motion, dir_ / "motions" / (id + ".gmo"));
  motions_.insert_or_assign(id, std::move(motion));
  return id;
}

std::optional<MotionSequence> ArtifactStore::motion(const std::string& id) const {
  {
    std::lock_guard lock(mu_);
    auto it = motions_.find(id);
    if (it != motions_.end()) return it->second;
  }
  if (auto p = on_disk("motions", id, ".gmo")) return load_motion(*p);
  return std::nullopt;
}

std::string ArtifactStore::put_noise(NoisePair noise) {
  std::lock_guard lock(mu_);
  auto id = next_id("n", "noise", ".bin");
  if (!dir_.empty()) save_noise_pair(noise, dir_ / "noise" / (id + ".bin"));
  noise_.insert_or_assign(id, std::move(noise));
  return id;
}

std::optional<NoisePair> ArtifactStore::noise(const std::string& id) const {
  {
    std::lock_guard lock(mu_);
    auto it = noise_.find(id);
    if (it != noise_.end()) return it->second;
  }
  if (auto p = on_disk("noise", id, ".bin")) return load_noise_pair(*p);
  return std::nullopt;
}

std::string ArtifactStore::put_checkpoint(std::shared_ptr<const Checkpoint> checkpoint) {
  std::lock_guard lock(mu_);
  auto id = next_id("ckpt", "checkpoints", ".json");
  if (!dir_.empty()) {
    save_checkpoint(checkpoint->params, checkpoint->schedule, dir_ / "checkpoints" / (id + ".json"));
  }
  checkpoints_.insert_or_assign(id, std::move(checkpoint));
  return id;
}

std::shared_ptr<const Checkpoint> ArtifactStore::checkpoint(const std::string& id) const {
  {
    std::lock_guard lock(mu_);
    auto it = checkpoints_.find(id);
    if (it != checkpoints_.end()) return it->second;
  }
  if (auto p = on_disk("checkpoints", id, ".json")) {
    return std::make_shared<const Checkpoint>(load_checkpoint(*p));
  }
  return nullptr;
}

}  // namespace gestinv::service
