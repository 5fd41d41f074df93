#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scent/archetype.hpp"
#include "scent/linalg.hpp"
#include "scent/note_bayes.hpp"

namespace scent {

/// Everything ingested about one user.
struct UserRecord {
    std::string user_id;
    std::optional<QuestionnaireResponse> questionnaire;
    std::vector<BehavioralObservation> behaviors;
    RawDemographics demographics;
};

/// One historical rating row (ratings.v1.csv).
struct RatingRow {
    std::string user_id;
    std::string session_id;
    Layer layer = Layer::Top;
    Vector descriptor;
    double rating = 0.0;
};

struct Fragrance {
    std::string id;
    std::string name;
    std::array<Vector, 3> descriptors;  // indexed by Layer
};

struct Catalog {
    std::vector<std::string> descriptor_names;
    std::vector<Fragrance> fragrances;
};

}  // namespace scent
