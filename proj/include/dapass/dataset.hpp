#pragma once

// Dataset persistence: images as binary PPM (P6), labels as binary PGM (P5),
// plus a manifest with one record per line. Label reads go through a single
// instrumented entry point so tests can prove the adaptation loop never
// touches target ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include "dapass/types.hpp"

namespace dapass::data {

struct ManifestEntry {
    std::string id;
    std::string image_rel, label_rel;
    Domain domain = Domain::Source;
    SplitTag split = SplitTag::Train;
};

void write_ppm(const std::string& path, const TensorF& image);
TensorF read_ppm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& label);
LabelMap read_pgm(const std::string& path);

// Total PGM label loads executed by this process. The SFUDA contract test
// asserts this stays flat across an entire adapt() call.
int64_t label_read_count();

void write_dataset(const std::string& root, const std::vector<Sample>& samples);
std::vector<ManifestEntry> read_manifest(const std::string& root);

std::vector<ManifestEntry> filter(const std::vector<ManifestEntry>& all, Domain d, SplitTag s);

Sample load_sample(const std::string& root, const ManifestEntry& e);
UnlabeledSample load_unlabeled(const std::string& root, const ManifestEntry& e);

std::vector<Sample> load_samples(const std::string& root, Domain d, SplitTag s);
std::vector<UnlabeledSample> load_unlabeled_split(const std::string& root, Domain d, SplitTag s);

}  // namespace dapass::data
