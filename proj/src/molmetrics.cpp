#include "organ/molmetrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "organ/errors.hpp"

namespace organ::chem {

namespace {

std::size_t ix(int i) { return static_cast<std::size_t>(i); }

// ---------------------------------------------------------------------------
// Neighbour pattern matching used by the atom typers

enum class BondQuery { Default, Single, Double, Triple, Aromatic };

bool bond_matches(const Bond& b, BondQuery q) {
  switch (q) {
    case BondQuery::Default: return b.aromatic || b.order == 1;
    case BondQuery::Single: return !b.aromatic && b.order == 1;
    case BondQuery::Double: return !b.aromatic && b.order == 2;
    case BondQuery::Triple: return !b.aromatic && b.order == 3;
    case BondQuery::Aromatic: return b.aromatic;
  }
  return false;
}

using AtomTest = std::function<bool(int)>;

struct Req {
  BondQuery bond;
  AtomTest atom;
};

class Typer {
 public:
  explicit Typer(const Molecule& m) : m_(m) {}

  Element el(int a) const { return m_.atom(a).element; }
  bool arom(int a) const { return m_.atom(a).aromatic; }
  int h(int a) const { return m_.atom(a).hydrogens; }
  int x(int a) const { return m_.total_degree(a); }
  int q(int a) const { return m_.atom(a).charge; }
  bool heavy(int a) const { return el(a) != Element::H; }

  // Distinct neighbours of `a` (other than `skip`) satisfying every requirement.
  bool has(int a, std::initializer_list<Req> reqs, int skip = -1) const {
    std::vector<Req> list(reqs);
    std::vector<int> used;
    return assign(a, list, 0, used, skip);
  }

  // SMARTS-like atom predicates.
  AtomTest aliphatic(Element e) const {
    return [this, e](int j) { return el(j) == e && !arom(j); };
  }
  AtomTest aromatic(Element e) const {
    return [this, e](int j) { return el(j) == e && arom(j); };
  }
  AtomTest element(Element e) const {
    return [this, e](int j) { return el(j) == e; };
  }
  AtomTest heavy_aliphatic() const {
    return [this](int j) { return heavy(j) && !arom(j); };
  }
  AtomTest heavy_any() const {
    return [this](int j) { return heavy(j); };
  }
  AtomTest any_aromatic() const {
    return [this](int j) { return arom(j); };
  }

  const Molecule& mol() const { return m_; }

 private:
  bool assign(int a, const std::vector<Req>& reqs, std::size_t k, std::vector<int>& used, int skip) const {
    if (k == reqs.size()) return true;
    for (const auto& nb : m_.neighbors(a)) {
      if (nb.atom == skip || std::find(used.begin(), used.end(), nb.atom) != used.end()) continue;
      if (!bond_matches(m_.bond(nb.bond), reqs[k].bond) || !reqs[k].atom(nb.atom)) continue;
      used.push_back(nb.atom);
      if (assign(a, reqs, k + 1, used, skip)) return true;
      used.pop_back();
    }
    return false;
  }

  const Molecule& m_;
};

constexpr BondQuery D = BondQuery::Default;
constexpr BondQuery S1 = BondQuery::Single;
constexpr BondQuery S2 = BondQuery::Double;
constexpr BondQuery S3 = BondQuery::Triple;
constexpr BondQuery AR = BondQuery::Aromatic;

std::string carbon_type(const Typer& t, int a) {
  const int H = t.h(a), X = t.x(a);
  const auto C = t.aliphatic(Element::C);
  const auto c = t.aromatic(Element::C);
  const auto A = t.heavy_aliphatic();
  const auto any = t.heavy_any();
  const auto ar = t.any_aromatic();
  const AtomTest hetero = [&t](int j) {
    return (!t.arom(j) && (t.el(j) == Element::N || t.el(j) == Element::O)) || t.el(j) == Element::F;
  };
  if (!t.arom(a)) {
    if (H == 4) return "C1";
    if (H == 3 && t.has(a, {{D, C}})) return "C1";
    if (H == 2 && t.has(a, {{D, C}, {D, C}})) return "C1";
    if (H == 1 && t.has(a, {{D, C}, {D, C}, {D, C}})) return "C2";
    if (t.has(a, {{D, C}, {D, C}, {D, C}, {D, C}})) return "C2";
    if (H == 3 && t.has(a, {{D, hetero}})) return "C3";
    if (H == 2 && X == 4 && t.has(a, {{D, hetero}, {D, A}})) return "C3";
    if (H == 1 && X == 4 && t.has(a, {{D, hetero}, {D, A}, {D, A}})) return "C4";
    if (H == 0 && X == 4 && t.has(a, {{D, hetero}, {D, A}, {D, A}, {D, A}})) return "C4";
    const AtomTest non_carbon = [&t](int j) { return !t.arom(j) && t.heavy(j) && t.el(j) != Element::C; };
    if (t.has(a, {{S2, non_carbon}})) return "C5";
    if (H == 2 && t.has(a, {{S2, C}})) return "C6";
    if (H == 1 && t.has(a, {{S2, C}, {D, A}})) return "C6";
    if (H == 0 && t.has(a, {{S2, C}, {D, A}, {D, A}})) return "C6";
    if (t.has(a, {{S2, C}, {S2, C}})) return "C6";
    if (X == 2 && t.has(a, {{S3, A}})) return "C7";
    if (H == 3 && t.has(a, {{D, c}})) return "C8";
    if (H == 3 && t.has(a, {{D, ar}})) return "C9";
    if (H == 2 && X == 4 && t.has(a, {{D, ar}})) return "C10";
    if (H == 1 && X == 4 && t.has(a, {{D, ar}})) return "C11";
    if (H == 0 && X == 4 && t.has(a, {{D, ar}})) return "C12";
    if (t.has(a, {{S2, C}, {D, ar}, {D, A}})) return "C26";
    if (t.has(a, {{S2, C}, {D, c}, {D, ar}})) return "C26";
    if (H == 1 && t.has(a, {{S2, C}, {D, ar}})) return "C26";
    if (t.has(a, {{S2, c}})) return "C26";
    return "CS";
  }
  if (t.has(a, {{D, t.element(Element::F)}})) return "C14";
  if (H == 1) return "C18";
  if (t.has(a, {{AR, ar}, {AR, ar}, {AR, ar}})) return "C19";
  if (t.has(a, {{AR, ar}, {AR, ar}, {S1, ar}})) return "C20";
  if (t.has(a, {{AR, ar}, {AR, ar}, {S1, C}})) return "C21";
  if (t.has(a, {{AR, ar}, {AR, ar}, {S1, t.aliphatic(Element::N)}})) return "C22";
  if (t.has(a, {{AR, ar}, {AR, ar}, {S1, t.aliphatic(Element::O)}})) return "C23";
  const AtomTest cno = [&t](int j) {
    return !t.arom(j) && (t.el(j) == Element::C || t.el(j) == Element::N || t.el(j) == Element::O);
  };
  if (t.has(a, {{AR, ar}, {AR, ar}, {S2, cno}})) return "C25";
  return "CS";
}

std::string nitrogen_type(const Typer& t, int a) {
  const int H = t.h(a), Q = t.q(a);
  const auto A = t.heavy_aliphatic();
  const auto any = t.heavy_any();
  const auto ar = t.any_aromatic();
  if (t.arom(a)) {
    if (Q == 0) return "N11";
    if (Q > 0) return "N12";
    return "NS";
  }
  if (Q == 0) {
    if (H == 2 && t.has(a, {{D, A}})) return "N1";
    if (H == 1 && t.has(a, {{D, A}, {D, A}})) return "N2";
    if (H == 2 && t.has(a, {{D, ar}})) return "N3";
    if (H == 1 && t.has(a, {{D, any}, {D, ar}})) return "N4";
    if (H == 1 && t.has(a, {{S2, any}})) return "N5";
    if (t.has(a, {{S2, any}, {D, any}})) return "N6";
    if (t.has(a, {{D, A}, {D, A}, {D, A}})) return "N7";
    if (t.has(a, {{D, ar}, {D, any}, {D, A}})) return "N8";
    if (t.has(a, {{D, ar}, {D, ar}, {D, ar}})) return "N8";
    if (t.has(a, {{S3, A}})) return "N9";
    return "NS";
  }
  if (Q > 0) {
    if (H >= 1 && H <= 3) return "N10";
    if (H == 0 && t.has(a, {{D, A}, {D, A}, {D, A}, {D, A}})) return "N13";
    if (H == 0 && t.has(a, {{S2, A}, {D, A}, {D, any}})) return "N13";
    if (H == 0 && t.has(a, {{S2, t.element(Element::C)}, {S2, t.element(Element::N)}})) return "N13";
    if (t.has(a, {{S3, A}})) return "N14";
    const AtomTest anion_n = [&t](int j) { return !t.arom(j) && t.el(j) == Element::N && t.q(j) < 0; };
    if (t.has(a, {{S2, anion_n}, {S2, t.aliphatic(Element::N)}})) return "N14";
    return "NS";
  }
  return "N14";
}

std::string oxygen_type(const Typer& t, int a) {
  const int H = t.h(a), X = t.x(a), Q = t.q(a);
  const auto A = t.heavy_aliphatic();
  const auto any = t.heavy_any();
  const auto ar = t.any_aromatic();
  const auto C = t.aliphatic(Element::C);
  const auto c = t.aromatic(Element::C);
  const auto& m = t.mol();
  if (t.arom(a)) return "O1";
  if (H == 1 || H == 2) return "O2";
  if (t.has(a, {{D, A}, {D, A}})) return "O3";
  if (t.has(a, {{D, ar}, {D, any}})) return "O4";
  const AtomTest n_or_o = [&t](int j) { return t.el(j) == Element::N || t.el(j) == Element::O; };
  if (t.has(a, {{S2, n_or_o}})) return "O5";
  if (X == 1 && Q < 0 && t.has(a, {{D, t.element(Element::N)}})) return "O5";
  if (Q == -1) {
    const AtomTest carboxyl = [&](int j) {
      return !t.arom(j) && t.el(j) == Element::C && t.has(j, {{S2, t.aliphatic(Element::O)}}, a);
    };
    if (t.has(a, {{D, carboxyl}})) return "O12";
  }
  if (X == 1 && Q < 0) {
    const AtomTest not_n = [&t](int j) { return t.heavy(j) && !(t.el(j) == Element::N && !t.arom(j)); };
    if (t.has(a, {{D, not_n}})) return "O7";
  }
  if (t.has(a, {{S2, c}})) return "O8";
  // Carbonyl oxygens: inspect the carbon on the other end of the double bond.
  int carbon = -1;
  for (const auto& nb : m.neighbors(a))
    if (bond_matches(m.bond(nb.bond), S2) && t.el(nb.atom) == Element::C && !t.arom(nb.atom)) carbon = nb.atom;
  if (carbon >= 0) {
    const int k = carbon;
    const int kh = t.h(k);
    const AtomTest n_or_o_aliph = [&t](int j) {
      return !t.arom(j) && (t.el(j) == Element::N || t.el(j) == Element::O);
    };
    if (kh == 1 && t.has(k, {{D, C}}, a)) return "O9";
    if (t.has(k, {{D, C}, {D, A}}, a)) return "O9";
    if (kh == 1 && t.has(k, {{D, n_or_o_aliph}}, a)) return "O9";
    if (kh == 2) return "O9";
    if (t.x(k) == 2 && t.has(k, {{S2, t.aliphatic(Element::O)}}, a)) return "O9";
    const AtomTest any_c = t.element(Element::C);
    const AtomTest arom_heavy = [&t](int j) { return t.arom(j) && t.heavy(j); };
    if (kh == 1 && t.has(k, {{D, c}}, a)) return "O10";
    if (t.has(k, {{D, any_c}, {D, arom_heavy}}, a)) return "O10";
    if (t.has(k, {{D, c}, {D, A}}, a)) return "O10";
    const AtomTest hetero = [&t](int j) { return t.heavy(j) && t.el(j) != Element::C; };
    if (t.has(k, {{D, hetero}, {D, hetero}}, a)) return "O11";
  }
  return "OS";
}

std::string fluorine_type(const Typer& t, int a) {
  if (t.q(a) == 0) return "F";
  if (t.q(a) < 0) return "Hal";
  return "";
}

// Type of a hydrogen bonded to `a`.
std::string hydrogen_type(const Typer& t, int a) {
  const auto& m = t.mol();
  switch (t.el(a)) {
    case Element::C:
    case Element::H:
      return "H1";
    case Element::N:
      return "H3";
    case Element::F:
      return "H2";
    case Element::O: {
      if (t.arom(a)) return "H2";
      bool alcohol = t.h(a) >= 2;
      bool n_attached = false, acid = false, peroxide = false;
      for (const auto& nb : m.neighbors(a)) {
        const int j = nb.atom;
        const bool aliph = !t.arom(j);
        if (t.el(j) == Element::C && ((aliph && t.x(j) == 4) || !aliph)) alcohol = true;
        if (!(aliph && (t.el(j) == Element::C || t.el(j) == Element::N || t.el(j) == Element::O))) alcohol = true;
        if (t.el(j) == Element::N) n_attached = true;
        if (aliph && t.el(j) == Element::C) {
          const AtomTest partner = [&t](int k) {
            return t.el(k) == Element::C || t.el(k) == Element::N || (t.el(k) == Element::O && !t.arom(k));
          };
          if (t.has(j, {{S2, partner}}, a)) acid = true;
        }
        if (aliph && t.el(j) == Element::O) peroxide = true;
      }
      if (alcohol) return "H2";
      if (n_attached) return "H3";
      if (acid || peroxide) return "H4";
      return "HS";
    }
  }
  return "HS";
}

double contribution(const std::string& type) {
  static const std::map<std::string, double> table = {
      {"C1", 0.1441},   {"C2", 0.0},      {"C3", -0.2035},  {"C4", -0.2051},  {"C5", -0.2783},
      {"C6", 0.1551},   {"C7", 0.0017},   {"C8", 0.08452},  {"C9", -0.1444},  {"C10", -0.0516},
      {"C11", 0.1193},  {"C12", -0.0967}, {"C13", -0.5443}, {"C14", 0.0},     {"C18", 0.1581},
      {"C19", 0.2955},  {"C20", 0.2713},  {"C21", 0.136},   {"C22", 0.4619},  {"C23", 0.5437},
      {"C25", -0.8186}, {"C26", 0.264},   {"C27", 0.2148},  {"CS", 0.08129},  {"H1", 0.123},
      {"H2", -0.2677},  {"H3", 0.2142},   {"H4", 0.298},    {"HS", 0.1125},   {"N1", -1.019},
      {"N2", -0.7096},  {"N3", -1.027},   {"N4", -0.5188},  {"N5", 0.08387},  {"N6", 0.1836},
      {"N7", -0.3187},  {"N8", -0.4458},  {"N9", 0.01508},  {"N10", -1.95},   {"N11", -0.3239},
      {"N12", -1.119},  {"N13", -0.3396}, {"N14", 0.2887},  {"NS", -0.4806},  {"O1", 0.1552},
      {"O2", -0.2893},  {"O3", -0.0684},  {"O4", -0.4195},  {"O5", 0.0335},   {"O7", -1.189},
      {"O8", 0.1788},   {"O9", -0.1526},  {"O10", 0.1129},  {"O11", 0.4833},  {"O12", -1.326},
      {"OS", -0.1188},  {"F", 0.4202},    {"Hal", -2.996},
  };
  auto it = table.find(type);
  return it == table.end() ? 0.0 : it->second;
}

// ---------------------------------------------------------------------------
// Hashing

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t combine(std::uint64_t seed, std::uint64_t value) { return mix(seed ^ mix(value)); }

std::uint64_t atom_code(const Atom& a) {
  return static_cast<std::uint64_t>(a.element) * 16 + static_cast<std::uint64_t>(a.charge + 1) * 2 +
         (a.aromatic ? 1 : 0);
}

std::uint64_t bond_code(const Bond& b) { return b.aromatic ? 4 : static_cast<std::uint64_t>(b.order); }

}  // namespace

// ---------------------------------------------------------------------------
// Descriptors

std::vector<std::string> crippen_types(const Molecule& m) {
  Typer t(m);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < m.atom_count(); ++i) {
    const int a = static_cast<int>(i);
    switch (t.el(a)) {
      case Element::C: out.push_back(carbon_type(t, a)); break;
      case Element::N: out.push_back(nitrogen_type(t, a)); break;
      case Element::O: out.push_back(oxygen_type(t, a)); break;
      case Element::F: out.push_back(fluorine_type(t, a)); break;
      case Element::H: {
        const auto nbrs = m.neighbors(a);
        out.push_back(nbrs.empty() ? "HS" : hydrogen_type(t, nbrs[0].atom));
        break;
      }
    }
    const std::string ht = t.h(a) > 0 ? hydrogen_type(t, a) : "";
    for (int k = 0; k < t.h(a); ++k) out.push_back(ht);
  }
  return out;
}

double crippen_logp(const Molecule& m) {
  double sum = 0.0;
  for (const auto& type : crippen_types(m)) sum += contribution(type);
  return sum;
}

double molecular_weight(const Molecule& m) {
  double w = 0.0;
  for (const auto& a : m.atoms()) w += atomic_mass(a.element, a.isotope) + a.hydrogens * atomic_mass(Element::H, 0);
  return w;
}

int hbond_donors(const Molecule& m) {
  int count = 0;
  for (std::size_t i = 0; i < m.atom_count(); ++i) {
    const int a = static_cast<int>(i);
    const auto& atom = m.atom(a);
    const int v = m.valence(a);
    if (atom.element == Element::N && !atom.aromatic && atom.hydrogens > 0 &&
        ((atom.charge == 0 && v == 3) || (atom.charge == 1 && v == 4)))
      ++count;
    else if (atom.element == Element::O && !atom.aromatic && atom.hydrogens == 1 && atom.charge == 0)
      ++count;
    else if (atom.element == Element::N && atom.aromatic && atom.hydrogens == 1 && atom.charge == 0)
      ++count;
  }
  return count;
}

int hbond_acceptors(const Molecule& m) {
  // True when `j` carries a double bond to an aliphatic N or O other than `skip`.
  auto double_to_hetero = [&](int j, int skip, bool acyclic_only) {
    for (const auto& nb : m.neighbors(j)) {
      if (nb.atom == skip) continue;
      const auto& b = m.bond(nb.bond);
      if (!bond_matches(b, S2)) continue;
      if (acyclic_only && m.bond_in_ring(nb.bond)) continue;
      const auto& other = m.atom(nb.atom);
      if (!other.aromatic && (other.element == Element::O || other.element == Element::N)) return true;
    }
    return false;
  };
  int count = 0;
  for (std::size_t i = 0; i < m.atom_count(); ++i) {
    const int a = static_cast<int>(i);
    const auto& atom = m.atom(a);
    const int v = m.valence(a);
    bool acceptor = false;
    if (atom.element == Element::O && !atom.aromatic) {
      if (atom.hydrogens == 1 && v == 2) {
        acceptor = true;
        for (const auto& nb : m.neighbors(a))
          if (bond_matches(m.bond(nb.bond), S1) && double_to_hetero(nb.atom, a, false)) acceptor = false;
      } else if (atom.hydrogens == 0 && v == 2) {
        acceptor = true;
      } else if (atom.charge < 0) {
        acceptor = true;
      }
    } else if (atom.element == Element::N && !atom.aromatic && v == 3) {
      acceptor = true;
      for (const auto& nb : m.neighbors(a))
        if (bond_matches(m.bond(nb.bond), S1) && double_to_hetero(nb.atom, a, true)) acceptor = false;
    } else if (atom.element == Element::N && atom.aromatic && atom.hydrogens == 0 && atom.charge == 0) {
      acceptor = m.total_degree(a) == 2;
    } else if (atom.element == Element::O && atom.aromatic && atom.charge == 0) {
      acceptor = true;
    }
    count += acceptor ? 1 : 0;
  }
  return count;
}

Descriptors describe(const Molecule& m) {
  Descriptors d;
  d.molecular_weight = molecular_weight(m);
  d.logp = crippen_logp(m);
  d.donors = hbond_donors(m);
  d.acceptors = hbond_acceptors(m);
  d.rings = static_cast<int>(m.rings().size());
  d.aromatic_rings = static_cast<int>(m.aromatic_ring_count());
  return d;
}

// ---------------------------------------------------------------------------
// Solubility and druglikeness

double solubility_from_logp(double logp) {
  const double clipped = std::clamp(logp, kLogpFloor, kLogpCeiling);
  return (clipped - kLogpFloor) / (kLogpCeiling - kLogpFloor);
}

double solubility(const Molecule& m) { return solubility_from_logp(crippen_logp(m)); }

double Hump::operator()(double x) const {
  if (knots.empty() || x < knots.front().first || x > knots.back().first) return 0.0;
  for (std::size_t k = 1; k < knots.size(); ++k) {
    const auto& [x1, y1] = knots[k];
    if (x <= x1) {
      const auto& [x0, y0] = knots[k - 1];
      return x1 == x0 ? y1 : y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    }
  }
  return knots.back().second;
}

double druglikeness(const Descriptors& d, const DruglikenessModel& model) {
  const double terms[5][2] = {
      {model.weight(d.molecular_weight), model.weight_w},
      {model.logp(d.logp), model.logp_w},
      {model.donors(d.donors), model.donors_w},
      {model.acceptors(d.acceptors), model.acceptors_w},
      {model.rings(d.aromatic_rings), model.rings_w},
  };
  double log_sum = 0.0, weight_sum = 0.0;
  for (const auto& [value, weight] : terms) {
    if (value <= 0.0) return 0.0;
    log_sum += weight * std::log(value);
    weight_sum += weight;
  }
  return std::clamp(std::exp(log_sum / weight_sum), 0.0, 1.0);
}

double druglikeness(const Molecule& m) { return druglikeness(describe(m)); }

// ---------------------------------------------------------------------------
// Fingerprints

Fingerprint::Fingerprint(std::size_t width) : width_(width), words_((width + 63) / 64, 0) {
  if (width == 0) throw ParameterError("fingerprint width must be positive");
}

void Fingerprint::set(std::size_t bit) { words_[bit / 64] |= std::uint64_t{1} << (bit % 64); }
bool Fingerprint::test(std::size_t bit) const { return (words_[bit / 64] >> (bit % 64)) & 1U; }

std::size_t Fingerprint::count() const {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::size_t Fingerprint::intersection_count(const Fingerprint& other) const {
  if (other.width_ != width_) throw DimensionError("fingerprint widths differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) n += static_cast<std::size_t>(std::popcount(words_[i] & other.words_[i]));
  return n;
}

std::size_t Fingerprint::union_count(const Fingerprint& other) const {
  if (other.width_ != width_) throw DimensionError("fingerprint widths differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) n += static_cast<std::size_t>(std::popcount(words_[i] | other.words_[i]));
  return n;
}

bool Fingerprint::is_subset_of(const Fingerprint& other) const { return intersection_count(other) == count(); }

Fingerprint fingerprint(const Molecule& m, std::size_t width, int max_bonds) {
  Fingerprint fp(width);
  const std::size_t n = m.atom_count();
  std::vector<bool> on_path(n, false);
  std::vector<std::uint64_t> forward, backward;
  std::vector<int> atoms, bonds;

  auto emit = [&] {
    forward.clear();
    backward.clear();
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      forward.push_back(atom_code(m.atom(atoms[k])));
      if (k < bonds.size()) forward.push_back(bond_code(m.bond(bonds[k])));
    }
    backward.assign(forward.rbegin(), forward.rend());
    const auto& canonical = std::min(forward, backward);
    std::uint64_t h = mix(canonical.size());
    for (auto v : canonical) h = combine(h, v);
    fp.set(static_cast<std::size_t>(h % width));
  };
  std::function<void(int)> extend = [&](int a) {
    emit();
    if (static_cast<int>(bonds.size()) == max_bonds) return;
    for (const auto& nb : m.neighbors(a)) {
      if (on_path[ix(nb.atom)]) continue;
      on_path[ix(nb.atom)] = true;
      atoms.push_back(nb.atom);
      bonds.push_back(nb.bond);
      extend(nb.atom);
      atoms.pop_back();
      bonds.pop_back();
      on_path[ix(nb.atom)] = false;
    }
  };
  for (std::size_t s = 0; s < n; ++s) {
    on_path[s] = true;
    atoms.assign(1, static_cast<int>(s));
    bonds.clear();
    extend(static_cast<int>(s));
    on_path[s] = false;
  }
  return fp;
}

double jaccard(const Fingerprint& a, const Fingerprint& b) {
  const std::size_t u = a.union_count(b);
  if (u == 0) return 1.0;
  return static_cast<double>(a.intersection_count(b)) / static_cast<double>(u);
}

double diversity(const Fingerprint& m, std::span<const Fingerprint> reference) {
  if (reference.empty()) throw ParameterError("diversity needs a non-empty reference set");
  double sum = 0.0;
  for (const auto& r : reference) sum += jaccard(m, r);
  return 1.0 - sum / static_cast<double>(reference.size());
}

double diversity(const Molecule& m, std::span<const Molecule> reference) {
  std::vector<Fingerprint> fps;
  fps.reserve(reference.size());
  for (const auto& r : reference) fps.push_back(fingerprint(r));
  return diversity(fingerprint(m), fps);
}

// ---------------------------------------------------------------------------
// Circular fragments and synthesizability

std::vector<std::uint64_t> circular_fragments(const Molecule& m, int radius) {
  const std::size_t n = m.atom_count();
  const std::size_t words = (m.bonds().size() + 63) / 64;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint64_t> inv(n);
  for (std::size_t a = 0; a < n; ++a) {
    const int i = static_cast<int>(a);
    inv[a] = combine(atom_code(m.atom(i)), m.atom_in_ring(i) ? 1 : 0);
    ids.push_back(inv[a]);
  }
  using BondSet = std::vector<std::uint64_t>;
  std::vector<BondSet> env(n, BondSet(words, 0));
  std::vector<bool> active(n, true);
  std::set<BondSet> seen;
  for (int r = 1; r <= radius; ++r) {
    std::vector<std::uint64_t> next(n);
    std::vector<BondSet> grown(n);
    std::map<BondSet, std::uint64_t> fresh;
    for (std::size_t a = 0; a < n; ++a) {
      const int i = static_cast<int>(a);
      std::vector<std::pair<std::uint64_t, std::uint64_t>> around;
      grown[a] = env[a];
      for (const auto& nb : m.neighbors(i)) {
        around.emplace_back(bond_code(m.bond(nb.bond)), inv[ix(nb.atom)]);
        grown[a][ix(nb.bond) / 64] |= std::uint64_t{1} << (ix(nb.bond) % 64);
        for (std::size_t w = 0; w < words; ++w) grown[a][w] |= env[ix(nb.atom)][w];
      }
      std::sort(around.begin(), around.end());
      std::uint64_t h = combine(static_cast<std::uint64_t>(r), inv[a]);
      for (const auto& [bc, ni] : around) h = combine(combine(h, bc), ni);
      next[a] = h;
      if (!active[a]) continue;
      if (grown[a] == env[a]) {
        active[a] = false;
        continue;
      }
      auto [it, inserted] = fresh.emplace(grown[a], h);
      if (!inserted) it->second = std::min(it->second, h);
    }
    for (const auto& [bonds, id] : fresh) {
      if (seen.insert(bonds).second) ids.push_back(id);
    }
    inv = std::move(next);
    env = std::move(grown);
  }
  return ids;
}

int spiro_atom_count(const Molecule& m) {
  std::set<int> spiro;
  const auto& rings = m.rings();
  for (std::size_t i = 0; i < rings.size(); ++i)
    for (std::size_t j = i + 1; j < rings.size(); ++j) {
      std::vector<int> shared;
      for (int a : rings[i])
        if (std::find(rings[j].begin(), rings[j].end(), a) != rings[j].end()) shared.push_back(a);
      if (shared.size() == 1) spiro.insert(shared[0]);
    }
  return static_cast<int>(spiro.size());
}

int bridgehead_atom_count(const Molecule& m) {
  std::set<int> heads;
  const auto& rings = m.rings();
  for (std::size_t i = 0; i < rings.size(); ++i)
    for (std::size_t j = i + 1; j < rings.size(); ++j) {
      std::vector<int> shared;
      for (int a : rings[i])
        if (std::find(rings[j].begin(), rings[j].end(), a) != rings[j].end()) shared.push_back(a);
      if (shared.size() < 3) continue;
      // Ends of the shared path: shared atoms with fewer than two shared ring neighbours.
      for (int a : shared) {
        int inside = 0;
        for (const auto& nb : m.neighbors(a))
          if (std::find(shared.begin(), shared.end(), nb.atom) != shared.end()) ++inside;
        if (inside < 2) heads.insert(a);
      }
    }
  return static_cast<int>(heads.size());
}

ComplexityPenalty complexity_penalty(const Molecule& m) {
  ComplexityPenalty p;
  const double n = static_cast<double>(m.heavy_atom_count());
  p.size = std::pow(n, 1.005) - n;
  p.bridges = std::log1p(spiro_atom_count(m)) + std::log1p(bridgehead_atom_count(m));
  for (const auto& ring : m.rings())
    if (ring.size() > 8) p.macrocycle = std::log(2.0);
  return p;
}

namespace {

double percentile(std::vector<double> sorted_values, double p) {
  std::sort(sorted_values.begin(), sorted_values.end());
  const double pos = p * static_cast<double>(sorted_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

constexpr char kTableMagic[8] = {'O', 'R', 'G', 'A', 'N', 'F', 'T', '1'};
constexpr std::uint32_t kTableVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FileError("fragment table truncated");
  char buf[sizeof(T)];
  std::memcpy(buf, bytes.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

FragmentTable FragmentTable::build(std::span<const Molecule> corpus) {
  if (corpus.size() < kMinFragmentCorpus)
    throw ConfigError("fragment table needs at least " + std::to_string(kMinFragmentCorpus) + " molecules, got " +
                      std::to_string(corpus.size()));
  std::unordered_map<std::uint64_t, std::size_t> counts;
  for (const auto& m : corpus) {
    auto ids = circular_fragments(m);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (auto id : ids) ++counts[id];
  }
  FragmentTable table;
  table.corpus_size_ = corpus.size();
  const double n = static_cast<double>(corpus.size());
  for (const auto& [id, count] : counts) table.scores_[id] = std::log(static_cast<double>(count) / n);
  table.unseen_ = std::log(0.5 / n);
  std::vector<double> raw;
  raw.reserve(corpus.size());
  for (const auto& m : corpus) raw.push_back(table.raw_score(m));
  table.p05_ = percentile(raw, 0.05);
  table.p95_ = percentile(raw, 0.95);
  return table;
}

double FragmentTable::fragment_score(std::uint64_t id) const {
  auto it = scores_.find(id);
  return it == scores_.end() ? unseen_ : it->second;
}

double FragmentTable::raw_score(const Molecule& m) const {
  const auto ids = circular_fragments(m);
  double sum = 0.0;
  for (auto id : ids) sum += fragment_score(id);
  const double mean = ids.empty() ? unseen_ : sum / static_cast<double>(ids.size());
  return mean - complexity_penalty(m).total();
}

double FragmentTable::calibrate(double raw) const {
  const double spread = std::max(p95_ - p05_, 1e-9);
  return std::clamp(0.1 + 0.8 * (raw - p05_) / spread, 0.0, 1.0);
}

std::string FragmentTable::serialize() const {
  std::string out(kTableMagic, sizeof(kTableMagic));
  put<std::uint32_t>(out, kTableVersion);
  put<std::uint64_t>(out, corpus_size_);
  put<double>(out, unseen_);
  put<double>(out, p05_);
  put<double>(out, p95_);
  std::vector<std::pair<std::uint64_t, double>> entries(scores_.begin(), scores_.end());
  std::sort(entries.begin(), entries.end());
  put<std::uint64_t>(out, entries.size());
  for (const auto& [id, score] : entries) {
    put<std::uint64_t>(out, id);
    put<double>(out, score);
  }
  return out;
}

FragmentTable FragmentTable::deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof(kTableMagic) || bytes.substr(0, sizeof(kTableMagic)) != std::string_view(kTableMagic, 8))
    throw FileError("not a fragment table");
  std::size_t pos = sizeof(kTableMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kTableVersion) throw FileError("unsupported fragment table version " + std::to_string(version));
  FragmentTable t;
  t.corpus_size_ = take<std::uint64_t>(bytes, pos);
  t.unseen_ = take<double>(bytes, pos);
  t.p05_ = take<double>(bytes, pos);
  t.p95_ = take<double>(bytes, pos);
  const auto count = take<std::uint64_t>(bytes, pos);
  if (count > bytes.size() / 16) throw FileError("fragment table entry count exceeds payload");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = take<std::uint64_t>(bytes, pos);
    t.scores_[id] = take<double>(bytes, pos);
  }
  if (pos != bytes.size()) throw FileError("trailing bytes after fragment table");
  return t;
}

void FragmentTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("failed writing " + path.string());
}

FragmentTable FragmentTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

double synthesizability(const Molecule& m, const FragmentTable& table) {
  if (table.empty()) throw ConfigError("synthesizability needs a non-empty fragment table");
  return table.calibrate(table.raw_score(m));
}

// ---------------------------------------------------------------------------
// Batch helpers

double validity_fraction(std::span<const std::string> smiles) {
  if (smiles.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : smiles) ok += (!s.empty() && is_valid_smiles(s)) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(smiles.size());
}

double validity_fraction(const Batch& batch, const Vocabulary& vocab) {
  std::vector<std::string> decoded;
  decoded.reserve(batch.size());
  for (const auto& seq : batch) decoded.push_back(vocab.decode(seq));
  return validity_fraction(decoded);
}

std::vector<Molecule> parse_valid(std::span<const std::string> smiles) {
  std::vector<Molecule> out;
  for (const auto& s : smiles) {
    auto r = parse_smiles(s);
    if (r.ok()) out.push_back(std::move(*r.molecule));
  }
  return out;
}

}  // namespace organ::chem
