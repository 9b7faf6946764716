#pragma once

#include <filesystem>

#include "gdmsr/dataset.hpp"
#include "gdmsr/denoiser.hpp"

namespace gdmsr::io {

// On-disk layout of a prepared dataset directory:
//   meta.json                counts
//   user_map.tsv             dense index <TAB> external id
//   item_map.tsv
//   train.tsv / valid.tsv / test.tsv    user <TAB> item (dense ids)
//   social.tsv               u <TAB> v <TAB> provenance (0 observed, 1 fake)
void save_prepared(const std::filesystem::path& dir, const data::Dataset& d,
                   const data::SocialGraph& g);
std::pair<data::Dataset, data::SocialGraph> load_prepared(const std::filesystem::path& dir);

// Confidence store as `u <TAB> v <TAB> score <TAB> period` in edge-id order.
void save_store(const std::filesystem::path& path, const data::SocialGraph& g,
                const denoise::ConfidenceStore& store);
denoise::ConfidenceStore load_store(const std::filesystem::path& path,
                                    const data::SocialGraph& g);

}  // namespace gdmsr::io
