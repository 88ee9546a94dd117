#pragma once

#include <string>
#include <vector>

#include "dilvae/layers.hpp"

namespace dilvae {

struct ProbeReport {
    std::string name;
    std::size_t filter_size = 0;
    std::vector<std::size_t> dilations;
    std::size_t analytic = 0;
    std::size_t empirical = 0;               // observed window at the probed position
    std::vector<long long> causality_violations;  // offsets s - t > 0 with nonzero gradient
    std::vector<long long> window_mismatches;     // offsets t - s where reachable and observed support disagree
    bool ok() const { return analytic == empirical && causality_violations.empty() && window_mismatches.empty(); }
};

/// Offsets o = t - s that a causal stack can connect: sums of j_i * d_i
/// with 0 <= j_i < k. Its size minus the gaps is the window; its extent is
/// (k-1) * sum(d) + 1.
std::vector<bool> reachable_offsets(std::size_t filter_size, std::span<const std::size_t> dilations);

/// Receptive field of a causal residual stack, measured by Jacobian probes
/// on a random initialization and compared with (k-1) * sum(d) + 1.
ProbeReport probe_arch(const DecoderArch& arch, std::uint64_t seed = 1);

/// Random CNN decoder shapes used for the randomized probe sweep.
std::vector<DecoderArch> random_archs(std::size_t count, std::uint64_t seed);

/// Human-readable report line(s).
std::string format_probe(const ProbeReport& report);

} // namespace dilvae
