#pragma once

#include "dugi/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dugi {

// Writes `count` synthetic size x size infrared-style crops (Gaussian
// blob fields, ramps, smooth sinusoids, blob fields with a checker
// ornament) into dir plus a corpus.txt listing. Deterministic under
// the seed. Returns the listing path.
std::string synth_training_corpus(const std::string& dir, int count = 64, int size = 64,
                                  uint64_t seed = 7);

struct CurationPlant {
    std::string path;          // relative to the corpus dir
    std::string scene;
    bool dup_member = false;   // member of an all-mutual near-duplicate scene
    int border = 0;            // planted zero border width in pixels
    int content_w = 0;         // exact content box after border cropping
    int content_h = 0;
};

// 50-image curation corpus: near-duplicate pair and triple scenes,
// scenes whose members are deliberately far apart, singles, and planted
// zero borders. Writes the images, inputs.tsv (path<TAB>scene) and
// truth.tsv. The planted cosine-similarity margins are verified at
// generation time (duplicates > 0.9, distinct members <= 0.8) and a
// violation throws, so downstream tests can rely on them.
std::vector<CurationPlant> synth_curation_corpus(const std::string& dir, uint64_t seed = 11);

} // namespace dugi
