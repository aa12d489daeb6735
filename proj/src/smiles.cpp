#include "organ/smiles.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <queue>

namespace organ::chem {

// ---------------------------------------------------------------------------
// Molecule

Molecule::Molecule(std::vector<Atom> atoms, std::vector<Bond> bonds)
    : atoms_(std::move(atoms)), bonds_(std::move(bonds)), adjacency_(atoms_.size()) {
  for (std::size_t i = 0; i < bonds_.size(); ++i) {
    const auto& b = bonds_[i];
    adjacency_[static_cast<std::size_t>(b.a)].push_back({b.b, static_cast<int>(i)});
    adjacency_[static_cast<std::size_t>(b.b)].push_back({b.a, static_cast<int>(i)});
  }
  atom_ring_count_.assign(atoms_.size(), 0);
  bond_in_ring_.assign(bonds_.size(), false);
}

int Molecule::heavy_degree(int i) const {
  int d = 0;
  for (const auto& n : neighbors(i)) d += atom(n.atom).element != Element::H ? 1 : 0;
  return d;
}

int Molecule::total_degree(int i) const {
  return static_cast<int>(neighbors(i).size()) + atom(i).hydrogens;
}

int Molecule::valence(int i) const {
  int v = atom(i).hydrogens;
  for (const auto& n : neighbors(i)) v += bond(n.bond).order;
  return v;
}

int Molecule::bond_between(int a, int b) const {
  for (const auto& n : neighbors(a))
    if (n.atom == b) return n.bond;
  return -1;
}

std::size_t Molecule::aromatic_ring_count() const {
  std::size_t count = 0;
  for (const auto& ring : rings_) {
    bool all = true;
    for (std::size_t k = 0; k < ring.size() && all; ++k) {
      const int b = bond_between(ring[k], ring[(k + 1) % ring.size()]);
      all = b >= 0 && bond(b).aromatic;
    }
    count += all ? 1 : 0;
  }
  return count;
}

std::size_t Molecule::heavy_atom_count() const {
  return static_cast<std::size_t>(
      std::count_if(atoms_.begin(), atoms_.end(), [](const Atom& a) { return a.element != Element::H; }));
}

int Molecule::total_hydrogens() const {
  int h = 0;
  for (const auto& a : atoms_) h += a.hydrogens + (a.element == Element::H ? 1 : 0);
  return h;
}

void Molecule::set_rings(std::vector<std::vector<int>> rings) {
  rings_ = std::move(rings);
  atom_ring_count_.assign(atoms_.size(), 0);
  bond_in_ring_.assign(bonds_.size(), false);
  for (const auto& ring : rings_) {
    for (std::size_t k = 0; k < ring.size(); ++k) {
      ++atom_ring_count_[static_cast<std::size_t>(ring[k])];
      const int b = bond_between(ring[k], ring[(k + 1) % ring.size()]);
      if (b >= 0) bond_in_ring_[static_cast<std::size_t>(b)] = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Element data

int allowed_valence(Element e, int charge) {
  switch (e) {
    case Element::C:
      return charge == 0 ? 4 : (charge == 1 || charge == -1) ? 3 : -1;
    case Element::N:
      return charge == 0 ? 3 : charge == 1 ? 4 : charge == -1 ? 2 : -1;
    case Element::O:
      return charge == 0 ? 2 : charge == 1 ? 3 : charge == -1 ? 1 : -1;
    case Element::F:
      return charge == 0 ? 1 : charge == 1 ? 2 : charge == -1 ? 0 : -1;
    case Element::H:
      return charge == 0 ? 1 : (charge == 1 || charge == -1) ? 0 : -1;
  }
  return -1;
}

double atomic_mass(Element e, int isotope) {
  if (isotope > 0) return static_cast<double>(isotope);
  switch (e) {
    case Element::H: return 1.008;
    case Element::C: return 12.011;
    case Element::N: return 14.007;
    case Element::O: return 15.999;
    case Element::F: return 18.998;
  }
  return 0.0;
}

char element_symbol(Element e) {
  switch (e) {
    case Element::H: return 'H';
    case Element::C: return 'C';
    case Element::N: return 'N';
    case Element::O: return 'O';
    case Element::F: return 'F';
  }
  return '?';
}

std::string error_category_name(SmilesError e) {
  switch (e) {
    case SmilesError::None: return "none";
    case SmilesError::Syntax: return "syntax";
    case SmilesError::UnmatchedRing: return "unmatched_ring";
    case SmilesError::UnmatchedParen: return "unmatched_paren";
    case SmilesError::Valence: return "valence";
    case SmilesError::UnknownAtom: return "unknown_atom";
    case SmilesError::Aromaticity: return "aromaticity";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Rings

std::vector<bool> ring_bonds(std::size_t atom_count, std::span<const Bond> bonds) {
  std::vector<std::vector<Neighbor>> adj(atom_count);
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    adj[static_cast<std::size_t>(bonds[i].a)].push_back({bonds[i].b, static_cast<int>(i)});
    adj[static_cast<std::size_t>(bonds[i].b)].push_back({bonds[i].a, static_cast<int>(i)});
  }
  // Iterative Tarjan bridge search; every non-bridge lies on a cycle.
  std::vector<bool> in_ring(bonds.size(), true);
  std::vector<int> order(atom_count, -1), low(atom_count, 0);
  int counter = 0;
  struct Frame {
    int atom;
    int via_bond;
    std::size_t next;
  };
  for (std::size_t root = 0; root < atom_count; ++root) {
    if (order[root] >= 0) continue;
    std::vector<Frame> stack{{static_cast<int>(root), -1, 0}};
    order[root] = low[root] = counter++;
    while (!stack.empty()) {
      auto& f = stack.back();
      const auto u = static_cast<std::size_t>(f.atom);
      if (f.next < adj[u].size()) {
        const auto nb = adj[u][f.next++];
        if (nb.bond == f.via_bond) continue;
        const auto v = static_cast<std::size_t>(nb.atom);
        if (order[v] < 0) {
          order[v] = low[v] = counter++;
          stack.push_back({nb.atom, nb.bond, 0});
        } else {
          low[u] = std::min(low[u], order[v]);
        }
      } else {
        const Frame done = f;
        stack.pop_back();
        if (!stack.empty()) {
          const auto p = static_cast<std::size_t>(stack.back().atom);
          const auto d = static_cast<std::size_t>(done.atom);
          low[p] = std::min(low[p], low[d]);
          if (low[d] > order[p]) in_ring[static_cast<std::size_t>(done.via_bond)] = false;
        }
      }
    }
  }
  return in_ring;
}

std::vector<std::vector<int>> smallest_rings(std::size_t atom_count, std::span<const Bond> bonds) {
  const auto in_ring = ring_bonds(atom_count, bonds);
  std::vector<int> edge_index(bonds.size(), -1);
  std::vector<std::vector<Neighbor>> adj(atom_count);
  int edges = 0;
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    if (!in_ring[i]) continue;
    edge_index[i] = edges++;
    adj[static_cast<std::size_t>(bonds[i].a)].push_back({bonds[i].b, static_cast<int>(i)});
    adj[static_cast<std::size_t>(bonds[i].b)].push_back({bonds[i].a, static_cast<int>(i)});
  }
  if (edges == 0) return {};
  for (auto& list : adj)
    std::sort(list.begin(), list.end(), [](const Neighbor& x, const Neighbor& y) { return x.atom < y.atom; });

  // Cyclomatic number of the ring subgraph.
  int vertices = 0, components = 0;
  {
    std::vector<bool> seen(atom_count, false);
    for (std::size_t s = 0; s < atom_count; ++s) {
      if (adj[s].empty() || seen[s]) continue;
      ++components;
      std::vector<std::size_t> todo{s};
      seen[s] = true;
      while (!todo.empty()) {
        const auto u = todo.back();
        todo.pop_back();
        ++vertices;
        for (const auto& nb : adj[u]) {
          const auto v = static_cast<std::size_t>(nb.atom);
          if (!seen[v]) {
            seen[v] = true;
            todo.push_back(v);
          }
        }
      }
    }
  }
  const int needed = edges - vertices + components;

  const std::size_t words = (static_cast<std::size_t>(edges) + 63) / 64;
  struct Candidate {
    std::vector<int> atoms;
    std::vector<std::uint64_t> bits;
  };
  std::vector<Candidate> candidates;
  std::vector<int> dist(atom_count), parent(atom_count), parent_bond(atom_count);
  std::vector<int> mark(atom_count, -1);
  for (std::size_t v = 0; v < atom_count; ++v) {
    if (adj[v].empty()) continue;
    std::fill(dist.begin(), dist.end(), -1);
    std::queue<std::size_t> q;
    dist[v] = 0;
    parent[v] = -1;
    parent_bond[v] = -1;
    q.push(v);
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (const auto& nb : adj[u]) {
        const auto w = static_cast<std::size_t>(nb.atom);
        if (dist[w] >= 0) continue;
        dist[w] = dist[u] + 1;
        parent[w] = static_cast<int>(u);
        parent_bond[w] = nb.bond;
        q.push(w);
      }
    }
    auto path_to_root = [&](int x) {
      std::vector<int> p;
      for (int a = x; a >= 0; a = parent[static_cast<std::size_t>(a)]) p.push_back(a);
      return p;
    };
    for (std::size_t i = 0; i < bonds.size(); ++i) {
      if (!in_ring[i]) continue;
      const int x = bonds[i].a, y = bonds[i].b;
      if (dist[static_cast<std::size_t>(x)] < 0 || dist[static_cast<std::size_t>(y)] < 0) continue;
      if (parent_bond[static_cast<std::size_t>(x)] == static_cast<int>(i) ||
          parent_bond[static_cast<std::size_t>(y)] == static_cast<int>(i))
        continue;
      auto px = path_to_root(x);
      auto py = path_to_root(y);
      const int stamp = static_cast<int>(v * bonds.size() + i);
      bool disjoint = true;
      for (std::size_t k = 0; k + 1 < px.size(); ++k) mark[static_cast<std::size_t>(px[k])] = stamp;
      for (std::size_t k = 0; k + 1 < py.size(); ++k)
        if (mark[static_cast<std::size_t>(py[k])] == stamp) disjoint = false;
      if (!disjoint) continue;
      Candidate c;
      c.bits.assign(words, 0);
      c.atoms.assign(px.rbegin(), px.rend());
      for (std::size_t k = 0; k + 1 < py.size(); ++k) c.atoms.push_back(py[k]);
      for (std::size_t k = 0; k < c.atoms.size(); ++k) {
        int b = -1;
        const auto a0 = static_cast<std::size_t>(c.atoms[k]);
        const int a1 = c.atoms[(k + 1) % c.atoms.size()];
        for (const auto& nb : adj[a0])
          if (nb.atom == a1) b = nb.bond;
        const auto e = static_cast<std::size_t>(edge_index[static_cast<std::size_t>(b)]);
        c.bits[e / 64] |= std::uint64_t{1} << (e % 64);
      }
      candidates.push_back(std::move(c));
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.atoms.size() != y.atoms.size()) return x.atoms.size() < y.atoms.size();
    return x.bits < y.bits;
  });

  // Greedy GF(2) independence over edge incidence vectors, shortest first.
  std::vector<std::vector<std::uint64_t>> basis;
  std::vector<std::size_t> pivots;
  std::vector<std::vector<int>> rings;
  for (const auto& c : candidates) {
    if (static_cast<int>(rings.size()) == needed) break;
    auto row = c.bits;
    for (std::size_t r = 0; r < basis.size(); ++r) {
      const auto p = pivots[r];
      if (row[p / 64] >> (p % 64) & 1U)
        for (std::size_t w = 0; w < words; ++w) row[w] ^= basis[r][w];
    }
    std::size_t pivot = words * 64;
    for (std::size_t w = 0; w < words && pivot == words * 64; ++w)
      if (row[w] != 0) pivot = w * 64 + static_cast<std::size_t>(__builtin_ctzll(row[w]));
    if (pivot == words * 64) continue;
    // Keep the basis reduced so later candidates eliminate in one pass.
    for (std::size_t r = 0; r < basis.size(); ++r)
      if (basis[r][pivot / 64] >> (pivot % 64) & 1U)
        for (std::size_t w = 0; w < words; ++w) basis[r][w] ^= row[w];
    basis.push_back(std::move(row));
    pivots.push_back(pivot);
    rings.push_back(c.atoms);
  }
  return rings;
}

namespace {

// ---------------------------------------------------------------------------
// Reader: characters to atoms and bond symbols

struct Failure {
  SmilesError error = SmilesError::None;
  std::string message;
  std::size_t position = 0;
};

struct RawBond {
  int a;
  int b;
  char symbol;  // 0 when unspecified
};

enum class Prev { Start, Atom, Bond, OpenParen, CloseParen, Ring, Dot };

bool is_bond_symbol(char c) {
  return c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\';
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  bool run();

  Failure failure;
  std::vector<Atom> atoms;
  std::vector<std::size_t> positions;
  std::vector<RawBond> bonds;

 private:
  bool fail(SmilesError e, std::string message, std::size_t pos) {
    failure = {e, std::move(message), pos};
    return false;
  }
  bool read_atom(std::size_t& i, Atom& out);
  bool read_bracket(std::size_t& i, Atom& out);
  bool bonded(int a, int b) const {
    return std::any_of(bonds.begin(), bonds.end(), [&](const RawBond& r) {
      return (r.a == a && r.b == b) || (r.a == b && r.b == a);
    });
  }

  std::string_view s_;
};

bool Reader::run() {
  struct RingOpening {
    int atom;
    char symbol;
    std::size_t position;
  };
  const std::size_t n = s_.size();
  std::size_t i = 0;
  Prev prev = Prev::Start;
  int current = -1;
  char pending = 0;
  bool bond_after_paren = false;
  std::vector<int> branches;
  std::map<int, RingOpening> open_rings;

  while (i < n) {
    const char c = s_[i];
    if (c == '(') {
      if (prev != Prev::Atom && prev != Prev::Ring && prev != Prev::CloseParen)
        return fail(SmilesError::Syntax, "'(' must follow an atom", i);
      branches.push_back(current);
      prev = Prev::OpenParen;
      ++i;
    } else if (c == ')') {
      if (branches.empty()) return fail(SmilesError::UnmatchedParen, "')' without matching '('", i);
      if (prev == Prev::OpenParen || prev == Prev::Bond || prev == Prev::Dot)
        return fail(SmilesError::Syntax, "empty branch or dangling bond before ')'", i);
      current = branches.back();
      branches.pop_back();
      prev = Prev::CloseParen;
      ++i;
    } else if (is_bond_symbol(c)) {
      if (prev == Prev::Start || prev == Prev::Dot || prev == Prev::Bond)
        return fail(SmilesError::Syntax, std::string("bond '") + c + "' has no preceding atom", i);
      bond_after_paren = prev == Prev::OpenParen;
      pending = c;
      prev = Prev::Bond;
      ++i;
    } else if (c == '.') {
      if (prev != Prev::Atom && prev != Prev::Ring && prev != Prev::CloseParen)
        return fail(SmilesError::Syntax, "'.' must follow an atom", i);
      current = -1;
      prev = Prev::Dot;
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
      const std::size_t start = i;
      int number = 0;
      if (c == '%') {
        if (i + 2 >= n || !std::isdigit(static_cast<unsigned char>(s_[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s_[i + 2])))
          return fail(SmilesError::Syntax, "'%' must be followed by two digits", i);
        number = (s_[i + 1] - '0') * 10 + (s_[i + 2] - '0');
        i += 3;
      } else {
        number = c - '0';
        ++i;
      }
      if (prev == Prev::Start || prev == Prev::OpenParen || prev == Prev::Dot ||
          (prev == Prev::Bond && bond_after_paren))
        return fail(SmilesError::Syntax, "ring bond number must follow an atom", start);
      const char symbol = prev == Prev::Bond ? pending : 0;
      auto it = open_rings.find(number);
      if (it == open_rings.end()) {
        open_rings.emplace(number, RingOpening{current, symbol, start});
      } else {
        const int other = it->second.atom;
        const char chosen = it->second.symbol != 0 ? it->second.symbol : symbol;
        open_rings.erase(it);
        if (other == current) return fail(SmilesError::Syntax, "ring bond closes on its own atom", start);
        if (bonded(other, current)) return fail(SmilesError::Syntax, "ring bond duplicates an existing bond", start);
        bonds.push_back({other, current, chosen});
      }
      pending = 0;
      prev = Prev::Ring;
    } else {
      const std::size_t start = i;
      Atom atom;
      if (!read_atom(i, atom)) return false;
      const int index = static_cast<int>(atoms.size());
      atoms.push_back(atom);
      positions.push_back(start);
      if (current >= 0) bonds.push_back({current, index, prev == Prev::Bond ? pending : char{0}});
      pending = 0;
      current = index;
      prev = Prev::Atom;
    }
  }
  if (!branches.empty()) return fail(SmilesError::UnmatchedParen, "unclosed '('", n);
  if (!open_rings.empty()) {
    const auto& [number, open] = *open_rings.begin();
    return fail(SmilesError::UnmatchedRing, "ring bond " + std::to_string(number) + " is never closed",
                open.position);
  }
  if (atoms.empty()) return fail(SmilesError::Syntax, "no atoms", 0);
  if (prev == Prev::Bond || prev == Prev::Dot) return fail(SmilesError::Syntax, "dangling bond or '.'", n);
  return true;
}

bool Reader::read_atom(std::size_t& i, Atom& out) {
  const char c = s_[i];
  if (c == '[') return read_bracket(i, out);
  const bool next_lower = i + 1 < s_.size() && std::islower(static_cast<unsigned char>(s_[i + 1]));
  switch (c) {
    case 'C':
      if (i + 1 < s_.size() && s_[i + 1] == 'l') return fail(SmilesError::UnknownAtom, "chlorine is not supported", i);
      out.element = Element::C;
      break;
    case 'N': out.element = Element::N; break;
    case 'O': out.element = Element::O; break;
    case 'F': out.element = Element::F; break;
    case 'c': out.element = Element::C; out.aromatic = true; break;
    case 'n': out.element = Element::N; out.aromatic = true; break;
    case 'o': out.element = Element::O; out.aromatic = true; break;
    default:
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '*')
        return fail(SmilesError::UnknownAtom, std::string("unsupported atom '") + c + (next_lower ? "..." : "") + "'", i);
      return fail(SmilesError::Syntax, std::string("unexpected character '") + c + "'", i);
  }
  ++i;
  return true;
}

bool Reader::read_bracket(std::size_t& i, Atom& out) {
  const std::size_t start = i;
  const std::size_t n = s_.size();
  auto digit = [&](std::size_t k) { return k < n && std::isdigit(static_cast<unsigned char>(s_[k])); };
  out.bracket = true;
  ++i;
  while (digit(i)) {
    out.isotope = std::min(out.isotope * 10 + (s_[i] - '0'), 999);
    ++i;
  }
  if (i >= n) return fail(SmilesError::Syntax, "unterminated bracket atom", start);
  const char c = s_[i];
  if (std::isupper(static_cast<unsigned char>(c))) {
    if (i + 1 < n && std::islower(static_cast<unsigned char>(s_[i + 1])))
      return fail(SmilesError::UnknownAtom, std::string("unsupported element '") + c + s_[i + 1] + "'", i);
    switch (c) {
      case 'C': out.element = Element::C; break;
      case 'N': out.element = Element::N; break;
      case 'O': out.element = Element::O; break;
      case 'F': out.element = Element::F; break;
      case 'H': out.element = Element::H; break;
      default: return fail(SmilesError::UnknownAtom, std::string("unsupported element '") + c + "'", i);
    }
  } else if (c == 'c' || c == 'n' || c == 'o') {
    out.element = c == 'c' ? Element::C : c == 'n' ? Element::N : Element::O;
    out.aromatic = true;
  } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '*') {
    return fail(SmilesError::UnknownAtom, std::string("unsupported element '") + c + "'", i);
  } else {
    return fail(SmilesError::Syntax, "bracket atom without element", i);
  }
  ++i;
  if (i < n && s_[i] == '@') {
    ++i;
    if (i < n && s_[i] == '@') ++i;
  }
  if (i < n && s_[i] == 'H') {
    ++i;
    out.hydrogens = 1;
    if (digit(i)) out.hydrogens = s_[i++] - '0';
  }
  if (i < n && (s_[i] == '+' || s_[i] == '-')) {
    const char sign = s_[i++];
    int magnitude = 1;
    if (digit(i)) {
      magnitude = s_[i++] - '0';
    } else {
      while (i < n && s_[i] == sign) {
        ++magnitude;
        ++i;
      }
    }
    if (magnitude > 1) return fail(SmilesError::UnknownAtom, "charges beyond +/-1 are not supported", start);
    out.charge = sign == '+' ? magnitude : -magnitude;
  }
  if (i < n && s_[i] == ':') {
    ++i;
    if (!digit(i)) return fail(SmilesError::Syntax, "atom class needs digits", i);
    while (digit(i)) ++i;
  }
  if (i >= n || s_[i] != ']') return fail(SmilesError::Syntax, "unterminated bracket atom", start);
  ++i;
  return true;
}

// ---------------------------------------------------------------------------
// Graph phase

class Builder {
 public:
  Builder(std::vector<Atom> atoms, std::vector<std::size_t> positions, const std::vector<RawBond>& raw)
      : atoms_(std::move(atoms)), positions_(std::move(positions)), adj_(atoms_.size()) {
    for (const auto& r : raw) {
      Bond b{r.a, r.b, 1, false};
      switch (r.symbol) {
        case '=': b.order = 2; break;
        case '#': b.order = 3; break;
        case ':': b.aromatic = true; break;
        case 0: b.aromatic = atoms_[idx(r.a)].aromatic && atoms_[idx(r.b)].aromatic; break;
        default: break;
      }
      const int k = static_cast<int>(bonds_.size());
      bonds_.push_back(b);
      adj_[idx(r.a)].push_back({r.b, k});
      adj_[idx(r.b)].push_back({r.a, k});
    }
  }

  ParseResult build();

 private:
  static std::size_t idx(int i) { return static_cast<std::size_t>(i); }
  ParseResult fail(SmilesError e, std::string message, int atom) const {
    ParseResult r;
    r.error = e;
    r.message = std::move(message);
    r.position = atom >= 0 ? positions_[idx(atom)] : 0;
    return r;
  }
  int degree(int a) const { return static_cast<int>(adj_[idx(a)].size()); }
  void normalize_charge_separation();
  bool kekulize();

  std::vector<Atom> atoms_;
  std::vector<std::size_t> positions_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adj_;
};

// Pentavalent neutral nitrogen written as N(=O)=O or N=N#N becomes the
// charge-separated form so that valence rules can stay strict.
void Builder::normalize_charge_separation() {
  for (std::size_t a = 0; a < atoms_.size(); ++a) {
    auto& atom = atoms_[a];
    if (atom.element != Element::N || atom.charge != 0 || atom.aromatic) continue;
    double v = atom.hydrogens;
    for (const auto& nb : adj_[a]) v += bonds_[idx(nb.bond)].aromatic ? 1.5 : bonds_[idx(nb.bond)].order;
    if (v != 5.0) continue;
    auto terminal = [&](const Neighbor& nb, Element e, int order) {
      const auto& other = atoms_[idx(nb.atom)];
      const auto& b = bonds_[idx(nb.bond)];
      return other.element == e && other.charge == 0 && !other.aromatic && other.hydrogens == 0 &&
             degree(nb.atom) == 1 && !b.aromatic && b.order == order;
    };
    bool done = false;
    for (const auto& nb : adj_[a]) {
      if (terminal(nb, Element::O, 2)) {
        atom.charge = 1;
        atoms_[idx(nb.atom)].charge = -1;
        bonds_[idx(nb.bond)].order = 1;
        done = true;
        break;
      }
    }
    if (done) continue;
    for (const auto& nb : adj_[a]) {
      if (terminal(nb, Element::N, 3)) {
        atom.charge = 1;
        atoms_[idx(nb.atom)].charge = -1;
        bonds_[idx(nb.bond)].order = 2;
        break;
      }
    }
  }
}

// Assigns alternating single/double orders to aromatic bonds as a perfect
// matching over the atoms that still need a double bond.
bool Builder::kekulize() {
  const std::size_t n = atoms_.size();
  std::vector<bool> needs(n, false);
  std::size_t needers = 0;
  for (std::size_t a = 0; a < n; ++a) {
    const auto& atom = atoms_[a];
    if (!atom.aromatic) continue;
    int fixed = atom.hydrogens;
    int aromatic_bonds = 0;
    for (const auto& nb : adj_[a]) {
      const auto& b = bonds_[idx(nb.bond)];
      if (b.aromatic) ++aromatic_bonds;
      else fixed += b.order;
    }
    if (allowed_valence(atom.element, atom.charge) - fixed - aromatic_bonds >= 1) {
      needs[a] = true;
      ++needers;
    }
  }
  if (needers % 2 != 0) return false;

  std::vector<int> mate(n, -1);
  std::vector<int> mate_bond(n, -1);
  long budget = 200000;
  std::function<bool()> solve = [&]() -> bool {
    if (--budget < 0) return false;
    int best = -1;
    int best_options = 1 << 30;
    for (std::size_t a = 0; a < n; ++a) {
      if (!needs[a] || mate[a] >= 0) continue;
      int options = 0;
      for (const auto& nb : adj_[a])
        if (bonds_[idx(nb.bond)].aromatic && needs[idx(nb.atom)] && mate[idx(nb.atom)] < 0) ++options;
      if (options < best_options) {
        best_options = options;
        best = static_cast<int>(a);
      }
    }
    if (best < 0) return true;
    if (best_options == 0) return false;
    for (const auto& nb : adj_[idx(best)]) {
      if (!bonds_[idx(nb.bond)].aromatic || !needs[idx(nb.atom)] || mate[idx(nb.atom)] >= 0) continue;
      mate[idx(best)] = nb.atom;
      mate[idx(nb.atom)] = best;
      mate_bond[idx(best)] = nb.bond;
      if (solve()) return true;
      mate[idx(best)] = -1;
      mate[idx(nb.atom)] = -1;
      if (budget < 0) return false;
    }
    return false;
  };
  if (!solve()) return false;
  for (auto& b : bonds_)
    if (b.aromatic) b.order = 1;
  for (std::size_t a = 0; a < n; ++a)
    if (mate_bond[a] >= 0) bonds_[idx(mate_bond[a])].order = 2;
  for (auto& b : bonds_) b.aromatic = false;
  for (auto& a : atoms_) a.aromatic = false;
  return true;
}

// Pi electrons an atom brings to a ring, or -1 when it cannot be aromatic.
int pi_electrons(const Molecule& mol, int a) {
  const auto& atom = mol.atom(a);
  int doubles = 0;
  int double_bond = -1;
  for (const auto& nb : mol.neighbors(a)) {
    const int order = mol.bond(nb.bond).order;
    if (order == 3) return -1;
    if (order == 2) {
      ++doubles;
      double_bond = nb.bond;
    }
  }
  if (doubles > 1) return -1;
  if (doubles == 1) {
    if (mol.bond_in_ring(double_bond)) return 1;
    const auto& partner = mol.atom(mol.bond(double_bond).other(a));
    return partner.element == Element::C ? -1 : 0;
  }
  if (atom.element == Element::N && atom.charge == 0 && mol.total_degree(a) <= 3) return 2;
  if (atom.element == Element::N && atom.charge == -1) return 2;
  if (atom.element == Element::O && atom.charge == 0) return 2;
  if (atom.element == Element::C && atom.charge == -1) return 2;
  if (atom.element == Element::C && atom.charge == 1) return 0;
  return -1;
}

// Marks single rings and connected sets of fused rings whose atoms hold
// 4n+2 pi electrons.
void perceive_aromaticity(Molecule& mol) {
  auto& atoms = mol.mutable_atoms();
  auto& bonds = mol.mutable_bonds();
  for (auto& a : atoms) a.aromatic = false;
  for (auto& b : bonds) b.aromatic = false;
  const auto& rings = mol.rings();
  const std::size_t n = atoms.size();
  std::vector<int> electrons(n);
  for (std::size_t a = 0; a < n; ++a) electrons[a] = pi_electrons(mol, static_cast<int>(a));

  std::vector<std::vector<int>> ring_bond_ids(rings.size());
  std::vector<bool> usable(rings.size(), true);
  for (std::size_t r = 0; r < rings.size(); ++r) {
    const auto& ring = rings[r];
    for (std::size_t k = 0; k < ring.size(); ++k) {
      ring_bond_ids[r].push_back(mol.bond_between(ring[k], ring[(k + 1) % ring.size()]));
      if (electrons[static_cast<std::size_t>(ring[k])] < 0) usable[r] = false;
    }
  }
  // Electrons are counted over the envelope: bonds that belong to exactly one
  // ring of the subset, and the atoms on them.
  auto try_subset = [&](const std::vector<std::size_t>& subset) {
    std::map<int, int> uses;
    for (auto r : subset)
      for (int b : ring_bond_ids[r]) ++uses[b];
    std::vector<int> members;
    for (const auto& [b, count] : uses) {
      if (count != 1) continue;
      members.push_back(bonds[static_cast<std::size_t>(b)].a);
      members.push_back(bonds[static_cast<std::size_t>(b)].b);
    }
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    int total = 0;
    for (int a : members) total += electrons[static_cast<std::size_t>(a)];
    if (total % 4 != 2) return;
    for (int a : members) atoms[static_cast<std::size_t>(a)].aromatic = true;
    for (const auto& [b, count] : uses)
      if (count == 1) bonds[static_cast<std::size_t>(b)].aromatic = true;
  };
  auto fused = [&](std::size_t x, std::size_t y) {
    for (int b : ring_bond_ids[x])
      if (std::find(ring_bond_ids[y].begin(), ring_bond_ids[y].end(), b) != ring_bond_ids[y].end()) return true;
    return false;
  };
  for (std::size_t r = 0; r < rings.size(); ++r)
    if (usable[r]) try_subset({r});

  // Connected subsets of fused usable rings, grown from their lowest member.
  constexpr std::size_t kMaxSubset = 6;
  long budget = 20000;
  std::vector<std::size_t> subset;
  std::function<void(std::size_t)> grow = [&](std::size_t lowest) {
    if (subset.size() >= 2) try_subset(subset);
    if (subset.size() == kMaxSubset || --budget < 0) return;
    for (std::size_t r = lowest + 1; r < rings.size(); ++r) {
      if (!usable[r] || std::find(subset.begin(), subset.end(), r) != subset.end()) continue;
      if (r < subset.back()) continue;
      bool touches = false;
      for (auto s : subset) touches = touches || fused(s, r);
      if (!touches) continue;
      subset.push_back(r);
      grow(lowest);
      subset.pop_back();
    }
  };
  for (std::size_t r = 0; r < rings.size(); ++r) {
    if (!usable[r]) continue;
    subset.assign(1, r);
    grow(r);
  }
}

ParseResult Builder::build() {
  const std::size_t n = atoms_.size();
  normalize_charge_separation();

  for (std::size_t a = 0; a < n; ++a) {
    const auto& atom = atoms_[a];
    int v = atom.hydrogens;
    for (const auto& nb : adj_[a]) v += bonds_[idx(nb.bond)].order;
    const int allowed = allowed_valence(atom.element, atom.charge);
    if (allowed < 0 || v > allowed)
      return fail(SmilesError::Valence,
                  std::string("atom ") + element_symbol(atom.element) + " at index " + std::to_string(a) +
                      " has valence " + std::to_string(v) + " > " + std::to_string(allowed),
                  static_cast<int>(a));
  }

  const auto cyclic = ring_bonds(n, bonds_);
  for (std::size_t a = 0; a < n; ++a) {
    if (!atoms_[a].aromatic) continue;
    const bool in_ring =
        std::any_of(adj_[a].begin(), adj_[a].end(), [&](const Neighbor& nb) { return cyclic[idx(nb.bond)]; });
    if (!in_ring) return fail(SmilesError::Aromaticity, "aromatic atom outside a ring", static_cast<int>(a));
  }
  for (std::size_t k = 0; k < bonds_.size(); ++k) {
    auto& b = bonds_[k];
    if (b.aromatic && (!cyclic[k] || !atoms_[idx(b.a)].aromatic || !atoms_[idx(b.b)].aromatic)) b.aromatic = false;
  }
  if (!kekulize()) return fail(SmilesError::Aromaticity, "aromatic system cannot be kekulized", -1);

  for (std::size_t a = 0; a < n; ++a) {
    auto& atom = atoms_[a];
    int v = atom.hydrogens;
    for (const auto& nb : adj_[a]) v += bonds_[idx(nb.bond)].order;
    const int allowed = allowed_valence(atom.element, atom.charge);
    if (v > allowed)
      return fail(SmilesError::Valence, "valence exceeded after kekulization", static_cast<int>(a));
    if (!atom.bracket) atom.hydrogens += allowed - v;
  }

  // Fold plain [H] atoms into their heavy neighbour's hydrogen count.
  std::vector<bool> fold(n, false);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& atom = atoms_[a];
    fold[a] = atom.element == Element::H && atom.charge == 0 && atom.isotope == 0 && adj_[a].size() == 1 &&
              atoms_[idx(adj_[a][0].atom)].element != Element::H;
    if (fold[a]) ++atoms_[idx(adj_[a][0].atom)].hydrogens;
  }
  std::vector<int> remap(n, -1);
  std::vector<Atom> kept;
  for (std::size_t a = 0; a < n; ++a) {
    if (fold[a]) continue;
    remap[a] = static_cast<int>(kept.size());
    kept.push_back(atoms_[a]);
  }
  std::vector<Bond> kept_bonds;
  for (const auto& b : bonds_) {
    if (remap[idx(b.a)] < 0 || remap[idx(b.b)] < 0) continue;
    kept_bonds.push_back({remap[idx(b.a)], remap[idx(b.b)], b.order, false});
  }

  Molecule mol(std::move(kept), std::move(kept_bonds));
  mol.set_rings(smallest_rings(mol.atom_count(), mol.bonds()));
  perceive_aromaticity(mol);
  ParseResult result;
  result.molecule = std::move(mol);
  return result;
}

}  // namespace

ParseResult parse_smiles(std::string_view smiles) {
  Reader reader(smiles);
  if (!reader.run()) {
    ParseResult r;
    r.error = reader.failure.error;
    r.message = std::move(reader.failure.message);
    r.position = reader.failure.position;
    return r;
  }
  Builder builder(std::move(reader.atoms), std::move(reader.positions), reader.bonds);
  return builder.build();
}

bool is_valid_smiles(std::string_view smiles) { return parse_smiles(smiles).ok(); }

}  // namespace organ::chem
