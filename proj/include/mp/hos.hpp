#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <vector>

#include "mp/frame.hpp"
#include "mp/scheme.hpp"
#include "mp/sigsynth.hpp"

namespace mp::hos {

/**
 * Second- and fourth-order cumulants of one pooled sample set:
 *   C20 = E[y^2]           C21 = E[|y|^2]
 *   C40 = E[y^4]  - 3 E[y^2]^2
 *   C41 = E[y^3 y*] - 3 E[y^2] E[|y|^2]
 *   C42 = E[|y|^4] - |E[y^2]|^2 - 2 E[|y|^2]^2
 * n4x holds C4x / C21^2. C21 and C42 are real by construction. Under a
 * rotation y -> e^{j beta} y, C42 is unchanged and C40 picks up e^{j 4 beta},
 * so (|n40|, n42) is the rotation-invariant signature pair.
 */
struct CumulantSet {
  std::complex<double> c20{};
  double c21 = 0.0;
  std::complex<double> c40{};
  std::complex<double> c41{};
  double c42 = 0.0;
  std::complex<double> n40{};
  std::complex<double> n41{};
  double n42 = 0.0;
};

CumulantSet estimate_cumulants(std::span<const std::complex<double>> samples);

/**
 * Pools the symbol-rate samples of every frame: indices phase, phase+stride,
 * ... of each frame. The synthesizer puts symbol centers at stride 8,
 * phase 0, which is where the constellation prototypes apply.
 */
CumulantSet estimate_cumulants(std::span<const IQFrame> frames, int stride = 8,
                               int phase = 0);

struct Prototype {
  ModulationScheme scheme = ModulationScheme::Bpsk;
  double c40_mag = 0.0;  // |C40| / C21^2 of the exact unit-power constellation
  double c42 = 0.0;      // C42 / C21^2 of the same
};

struct PrototypeTable {
  std::vector<Prototype> entries;

  // The six linear schemes with closed-form expectation values. The CPM
  // schemes are omitted: their frequency alphabet carries no constellation
  // cumulant signature.
  static PrototypeTable standard();
};

// Nearest prototype of the signature pair in Euclidean distance.
ModulationScheme nearest_prototype(const PrototypeTable& table, double c40_mag,
                                   double c42);

ModulationScheme classify_hos(std::span<const IQFrame> frames,
                              const PrototypeTable& table, int stride = 8,
                              int phase = 0);

struct AuditConfig {
  int group_size = 1;  // frames pooled per estimate, grouped within a class
  int stride = 8;
  int phase = 0;
};

struct AuditRow {
  int frame_id = 0;
  ModulationScheme dataset_label = ModulationScheme::Bpsk;
  ModulationScheme hos_label = ModulationScheme::Bpsk;
  bool mismatch = false;
  double c40_mag = 0.0;
  double c42 = 0.0;
};

struct ClassStat {
  ModulationScheme label = ModulationScheme::Bpsk;
  int frames = 0;
  int mismatches = 0;
  double rate = 0.0;
};

struct AuditReport {
  std::vector<AuditRow> rows;        // one per frame, in dataset order
  std::vector<ClassStat> per_class;  // first-seen label order
};

/**
 * Classifies every frame by its cumulant signature and compares against the
 * label the dataset claims. Pure statistics, no trained model involved.
 */
AuditReport audit_labels(const sigsynth::Dataset& dataset,
                         const PrototypeTable& table, const AuditConfig& cfg = {});

// CSV: frame_id,dataset_label,hos_label,mismatch,C40_mag,C42_real
void write_audit_csv(const AuditReport& report, const std::filesystem::path& path);

}  // namespace mp::hos
