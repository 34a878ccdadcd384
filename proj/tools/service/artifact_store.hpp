#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "gestinv/denoiser.hpp"
#include "gestinv/motion.hpp"
#include "gestinv/sampler.hpp"

namespace gestinv::service {

// Motions, reconstructed noise and checkpoints produced or uploaded during a
// session. With a storage directory every item is also written to disk
// (motions/<id>.gmo, noise/<id>.bin, checkpoints/<id>.json) and items already
// on disk can be fetched by file stem.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path dir = {});

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::string put_motion(MotionSequence motion);
  std::optional<MotionSequence> motion(const std::string& id) const;

  std::string put_noise(NoisePair noise);
  std::optional<NoisePair> noise(const std::string& id) const;

  std::string put_checkpoint(std::shared_ptr<const Checkpoint> checkpoint);
  std::shared_ptr<const Checkpoint> checkpoint(const std::string& id) const;

 private:
  std::string next_id(const char* prefix, const char* subdir, const char* ext);
  std::optional<std::filesystem::path> on_disk(const char* subdir, const std::string& id,
                                               const char* ext) const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::uint64_t counter_ = 1;
  std::map<std::string, MotionSequence> motions_;
  std::map<std::string, NoisePair> noise_;
  std::map<std::string, std::shared_ptr<const Checkpoint>> checkpoints_;
};

}  // namespace gestinv::service
