#pragma once

// SMILES reader for the C/N/O/F (+H) subset: organic and bracket atoms,
// aromatic c/n/o, bonds - = # : / \, branches, ring closures (0-9, %nn) and
// dot-separated components. Aromatic input is kekulized, implicit hydrogens
// are assigned, smallest rings are found and aromaticity is re-perceived with
// a per-ring 4n+2 rule.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace organ::chem {

enum class Element : std::uint8_t { H = 1, C = 6, N = 7, O = 8, F = 9 };

struct Atom {
  Element element = Element::C;
  int charge = 0;
  int isotope = 0;
  bool aromatic = false;
  bool bracket = false;
  /// Attached hydrogens not present as separate atoms (implicit plus bracket H).
  int hydrogens = 0;
};

struct Bond {
  int a = 0;
  int b = 0;
  /// Kekule order 1..3.
  int order = 1;
  bool aromatic = false;
  int other(int atom) const { return atom == a ? b : a; }
};

struct Neighbor {
  int atom;
  int bond;
};

class Molecule {
 public:
  Molecule() = default;
  Molecule(std::vector<Atom> atoms, std::vector<Bond> bonds);

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  const Atom& atom(int i) const { return atoms_[static_cast<std::size_t>(i)]; }
  const Bond& bond(int i) const { return bonds_[static_cast<std::size_t>(i)]; }
  std::span<const Neighbor> neighbors(int i) const { return adjacency_[static_cast<std::size_t>(i)]; }
  std::size_t atom_count() const { return atoms_.size(); }
  int heavy_degree(int i) const;
  /// Heavy neighbours plus attached hydrogens.
  int total_degree(int i) const;
  int valence(int i) const;
  int bond_between(int a, int b) const;  // -1 if none

  /// Smallest set of smallest rings; each ring lists atoms in cycle order.
  const std::vector<std::vector<int>>& rings() const { return rings_; }
  bool atom_in_ring(int i) const { return atom_ring_count_[static_cast<std::size_t>(i)] > 0; }
  int atom_ring_count(int i) const { return atom_ring_count_[static_cast<std::size_t>(i)]; }
  bool bond_in_ring(int i) const { return bond_in_ring_[static_cast<std::size_t>(i)]; }
  std::size_t aromatic_ring_count() const;

  std::size_t heavy_atom_count() const;
  int total_hydrogens() const;

  // Used by the parser after it has finished adjusting atoms and bonds.
  void set_rings(std::vector<std::vector<int>> rings);
  std::vector<Atom>& mutable_atoms() { return atoms_; }
  std::vector<Bond>& mutable_bonds() { return bonds_; }

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adjacency_;
  std::vector<std::vector<int>> rings_;
  std::vector<int> atom_ring_count_;
  std::vector<bool> bond_in_ring_;
};

enum class SmilesError { None, Syntax, UnmatchedRing, UnmatchedParen, Valence, UnknownAtom, Aromaticity };

std::string error_category_name(SmilesError e);

struct ParseResult {
  std::optional<Molecule> molecule;
  SmilesError error = SmilesError::None;
  std::string message;
  std::size_t position = 0;

  bool ok() const { return molecule.has_value(); }
  explicit operator bool() const { return ok(); }
};

ParseResult parse_smiles(std::string_view smiles);
bool is_valid_smiles(std::string_view smiles);

/// Highest total valence allowed for an element at a formal charge, or -1.
int allowed_valence(Element e, int charge);
double atomic_mass(Element e, int isotope);
char element_symbol(Element e);

/// Edge lists of bonds that lie on at least one cycle.
std::vector<bool> ring_bonds(std::size_t atom_count, std::span<const Bond> bonds);
/// Smallest set of smallest rings (Horton candidates, GF(2) independence).
std::vector<std::vector<int>> smallest_rings(std::size_t atom_count, std::span<const Bond> bonds);

}  // namespace organ::chem
