#pragma once

// Molecular objectives on parsed SMILES: Crippen LogP solubility, a
// fragment-frequency synthesizability score, a QED-style druglikeness proxy
// and path-fingerprint diversity. All scores land in [0, 1].

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "organ/smiles.hpp"
#include "organ/vocab.hpp"

namespace organ::chem {

// ---- descriptors ----------------------------------------------------------

/// Per-atom Crippen type labels ("C18", "H1", ...) for heavy atoms and their
/// hydrogens, in atom order; hydrogens follow their heavy atom.
std::vector<std::string> crippen_types(const Molecule& m);
double crippen_logp(const Molecule& m);
double molecular_weight(const Molecule& m);
int hbond_donors(const Molecule& m);
int hbond_acceptors(const Molecule& m);

struct Descriptors {
  double molecular_weight = 0.0;
  double logp = 0.0;
  int donors = 0;
  int acceptors = 0;
  int rings = 0;
  int aromatic_rings = 0;
};

Descriptors describe(const Molecule& m);

// ---- solubility -----------------------------------------------------------

inline constexpr double kLogpFloor = -2.0;
inline constexpr double kLogpCeiling = 7.0;

/// Clips LogP to [kLogpFloor, kLogpCeiling] and rescales to [0, 1].
double solubility_from_logp(double logp);
double solubility(const Molecule& m);

// ---- druglikeness ---------------------------------------------------------

/// Piecewise-linear desirability through (x, y) knots sorted by x; 0 outside
/// the first and last knot.
struct Hump {
  std::vector<std::pair<double, double>> knots;
  double operator()(double x) const;
};

/// Knots sample the asymmetric double-sigmoid desirability curves of QED
/// (Bickerton et al. 2012) with each peak scaled to 1. The ring hump scores
/// the aromatic ring count, as QED does.
struct DruglikenessModel {
  Hump weight{{{0, 0.037}, {50, 0.055}, {100, 0.101}, {150, 0.213}, {200, 0.446}, {250, 0.785}, {300, 1.0},
               {350, 0.87}, {400, 0.57}, {500, 0.174}, {600, 0.06}, {700, 0.034}, {800, 0.0}}};
  Hump logp{{{-5, 0.0}, {-4, 0.03}, {-2, 0.089}, {-1, 0.214}, {0, 0.472}, {1, 0.774}, {2, 0.956}, {3, 1.0},
             {4, 0.863}, {5, 0.469}, {6, 0.145}, {7, 0.048}, {8, 0.0}}};
  Hump donors{{{0, 0.592}, {1, 1.0}, {2, 0.792}, {3, 0.379}, {4, 0.147}, {5, 0.055}, {6, 0.023}, {8, 0.0}}};
  Hump acceptors{{{0, 0.028}, {1, 0.233}, {2, 0.93}, {3, 1.0}, {4, 0.887}, {5, 0.726}, {6, 0.525}, {8, 0.191},
                  {10, 0.062}, {12, 0.0}}};
  Hump rings{{{0, 0.472}, {1, 0.827}, {2, 1.0}, {3, 0.257}, {4, 0.035}, {5, 0.012}, {6, 0.0}}};
  double weight_w = 0.66;
  double logp_w = 0.46;
  double donors_w = 0.61;
  double acceptors_w = 0.05;
  double rings_w = 0.48;
};

/// Weighted geometric mean of the five desirabilities (molecular weight,
/// LogP, donors, acceptors, aromatic rings).
double druglikeness(const Descriptors& d, const DruglikenessModel& model = {});
double druglikeness(const Molecule& m);

// ---- fingerprints and diversity -------------------------------------------

inline constexpr std::size_t kFingerprintBits = 2048;
inline constexpr int kMaxPathBonds = 6;

class Fingerprint {
 public:
  explicit Fingerprint(std::size_t width = kFingerprintBits);

  std::size_t width() const { return width_; }
  void set(std::size_t bit);
  bool test(std::size_t bit) const;
  std::size_t count() const;
  std::size_t intersection_count(const Fingerprint& other) const;
  std::size_t union_count(const Fingerprint& other) const;
  bool is_subset_of(const Fingerprint& other) const;
  bool operator==(const Fingerprint&) const = default;

 private:
  std::size_t width_;
  std::vector<std::uint64_t> words_;
};

/// Hashed linear paths of 0..max_bonds bonds over element, charge and
/// aromaticity; each path is hashed in its lexicographically smaller
/// direction so the result does not depend on atom numbering.
Fingerprint fingerprint(const Molecule& m, std::size_t width = kFingerprintBits, int max_bonds = kMaxPathBonds);
double jaccard(const Fingerprint& a, const Fingerprint& b);
/// 1 - mean Jaccard similarity to the reference set.
double diversity(const Fingerprint& m, std::span<const Fingerprint> reference);
double diversity(const Molecule& m, std::span<const Molecule> reference);

// ---- synthesizability -----------------------------------------------------

/// Morgan-style circular environment ids up to `radius`, with environments
/// that cover an already-seen bond set dropped.
std::vector<std::uint64_t> circular_fragments(const Molecule& m, int radius = 2);

struct ComplexityPenalty {
  double size = 0.0;
  double bridges = 0.0;
  double macrocycle = 0.0;
  double total() const { return size + bridges + macrocycle; }
};
ComplexityPenalty complexity_penalty(const Molecule& m);
int spiro_atom_count(const Molecule& m);
int bridgehead_atom_count(const Molecule& m);

inline constexpr std::size_t kMinFragmentCorpus = 100;

class FragmentTable {
 public:
  /// Counts fragments over the corpus and calibrates the score map so the
  /// corpus 5th/95th percentiles land on 0.1/0.9. Throws ConfigError for fewer
  /// than kMinFragmentCorpus molecules.
  static FragmentTable build(std::span<const Molecule> corpus);

  bool empty() const { return scores_.empty(); }
  std::size_t size() const { return scores_.size(); }
  std::size_t corpus_size() const { return corpus_size_; }
  /// ln(fraction of corpus molecules containing the fragment); unseen
  /// fragments score as if half a molecule contained them.
  double fragment_score(std::uint64_t id) const;
  bool contains(std::uint64_t id) const { return scores_.count(id) > 0; }
  double low_percentile() const { return p05_; }
  double high_percentile() const { return p95_; }

  /// Mean fragment score minus complexity penalties.
  double raw_score(const Molecule& m) const;
  double calibrate(double raw) const;

  std::string serialize() const;
  static FragmentTable deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static FragmentTable load(const std::filesystem::path& path);

 private:
  std::unordered_map<std::uint64_t, double> scores_;
  std::size_t corpus_size_ = 0;
  double unseen_ = 0.0;
  double p05_ = 0.0;
  double p95_ = 0.0;
};

/// Throws ConfigError when the table is empty.
double synthesizability(const Molecule& m, const FragmentTable& table);

// ---- batch helpers --------------------------------------------------------

/// Fraction of decoded sequences that parse; empty strings and empty batches count as invalid / 0.
double validity_fraction(const Batch& batch, const Vocabulary& vocab);
double validity_fraction(std::span<const std::string> smiles);

/// Parses each line, keeping only valid molecules.
std::vector<Molecule> parse_valid(std::span<const std::string> smiles);

}  // namespace organ::chem
