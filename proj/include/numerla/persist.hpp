#pragma once

#include <string>

#include "numerla/cola.hpp"
#include "numerla/harness.hpp"
#include "numerla/policy.hpp"
#include "numerla/ssc.hpp"

namespace numerla::persist {

// Doubles are serialized as 16-hex-digit bit patterns so every file satisfies
// load(save(x)) == x bit-exactly.
std::string double_to_hex(double v);
double hex_to_double(const std::string& s);

// Write-temp-then-rename in the target directory; partial files never appear
// under the final name.
void atomic_write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

void save_checkpoint(const std::string& path, const policy::PolicyParams& p,
                     const std::string& seed_lineage);
policy::PolicyParams load_checkpoint(const std::string& path);

void save_bank(const std::string& path, const cola::SampleBank& bank);
cola::SampleBank load_bank(const std::string& path);

void save_knowledge(const std::string& path, const ssc::SSCFunction& f);
ssc::SSCFunction load_knowledge(const std::string& path);

void save_metrics(const std::string& path,
                  const harness::MetricsSummary& summary);
harness::MetricsSummary load_metrics(const std::string& path);

// Human-readable companions (not round-trip exact).
std::string metrics_csv(const harness::MetricsSummary& summary);
std::string episodes_csv(const harness::ExperimentResult& result);
std::string long_csv(const harness::ExperimentResult& result);

}  // namespace numerla::persist
