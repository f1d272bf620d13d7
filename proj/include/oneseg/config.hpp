#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "oneseg/encoder.hpp"
#include "oneseg/gabor.hpp"
#include "oneseg/propagate.hpp"
#include "oneseg/screening.hpp"
#include "oneseg/synth.hpp"
#include "oneseg/trainer.hpp"

namespace oneseg {

// Every recognised key with its default. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig();

    static const std::vector<std::pair<std::string, std::string>>& defaults();
    static bool known(const std::string& key);

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool explicitly_set(const std::string& key) const { return explicit_.count(key) != 0; }

    double number(const std::string& key) const;
    std::uint64_t count(const std::string& key) const;
    bool flag(const std::string& key) const;

    void load_file(const std::filesystem::path& path);

    // Derives every seed key that was not set explicitly from `seed`.
    void apply_seed(std::uint64_t seed);

    // All keys, sorted, one `key = value` per line.
    std::string to_text() const;
    void write(const std::filesystem::path& path) const;

    GaborParams gabor() const;
    bool bottleneck() const;
    EncoderConfig encoder() const;
    TrainConfig train() const;
    PropagateOptions propagate() const;
    SimilarityMode similarity() const;
    SynthConfig synth() const;
    std::size_t resize() const;  // 0 keeps the stored size

    // Checks every key parses and the derived module configs are valid.
    void validate() const;

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> explicit_;
};

// splitmix64 of (seed, stream); distinct streams give unrelated seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// `--workers` when given (> 0), else ONESEG_WORKERS, else 1.
std::size_t resolve_workers(std::size_t flag_value);

}  // namespace oneseg
