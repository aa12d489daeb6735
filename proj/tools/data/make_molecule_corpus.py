#!/usr/bin/env python3
"""Generate a synthetic corpus of small C/N/O/F molecules as SMILES.

Random molecular graphs with at most nine heavy atoms are grown atom by atom,
optionally closed into rings, sanitized with RDKit and written as canonical
SMILES. The result mimics the flavour of GDB-style enumerations (small, strained,
heteroatom-rich) and is what the training and acceptance runs use.

Usage: make_molecule_corpus.py OUT COUNT [SEED]
"""
import random
import sys

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")

ELEMENTS = [("C", 6, 4, 0.62), ("N", 7, 3, 0.15), ("O", 8, 2, 0.20), ("F", 9, 1, 0.03)]
HEAVY_ATOM_WEIGHTS = {3: 1, 4: 2, 5: 3, 6: 5, 7: 8, 8: 12, 9: 20}
ALPHABET = set("CNOFcno()=#123456789[]H+-@/\\")


def pick_element(rng):
    r = rng.random()
    acc = 0.0
    for sym, num, val, w in ELEMENTS:
        acc += w
        if r < acc:
            return num, val
    return ELEMENTS[0][1], ELEMENTS[0][2]


AROMATIC_SEEDS = ["c1ccccc1", "c1ccncc1", "c1ccoc1", "c1cc[nH]c1", "c1cnc[nH]1",
                  "c1cocn1", "c1cncnc1", "c1cnoc1", "c1ccnnc1"]
FORBIDDEN_PAIRS = {(8, 8), (8, 9), (7, 9), (9, 9), (9, 8), (9, 7)}


def free_valence(mol, idx, valences):
    used = sum(int(b.GetBondTypeAsDouble()) for b in mol.GetAtomWithIdx(idx).GetBonds())
    return valences[idx] - used


def random_molecule(rng):
    sizes = list(HEAVY_ATOM_WEIGHTS)
    n = rng.choices(sizes, weights=[HEAVY_ATOM_WEIGHTS[s] for s in sizes])[0]
    if rng.random() < 0.2:
        seed_mol = Chem.MolFromSmiles(rng.choice(AROMATIC_SEEDS))
        Chem.Kekulize(seed_mol, clearAromaticFlags=True)
        mol = Chem.RWMol(seed_mol)
        valences = [{6: 4, 7: 3, 8: 2}[a.GetAtomicNum()] - a.GetNumExplicitHs() for a in mol.GetAtoms()]
    else:
        mol = Chem.RWMol()
        valences = []
        mol.AddAtom(Chem.Atom(6))
        valences.append(4)
    while mol.GetNumAtoms() < n:
        candidates = [i for i in range(mol.GetNumAtoms()) if free_valence(mol, i, valences) > 0]
        if not candidates:
            break
        anchor = rng.choice(candidates)
        num, val = pick_element(rng)
        if (mol.GetAtomWithIdx(anchor).GetAtomicNum(), num) in FORBIDDEN_PAIRS:
            continue
        room = min(free_valence(mol, anchor, valences), val)
        order = rng.choices([1, 2, 3], weights=[0.78, 0.17, 0.05])[0]
        order = min(order, room)
        if val == 1:
            order = 1
        idx = mol.AddAtom(Chem.Atom(num))
        valences.append(val)
        mol.AddBond(anchor, idx, {1: Chem.BondType.SINGLE, 2: Chem.BondType.DOUBLE,
                                  3: Chem.BondType.TRIPLE}[order])
    closures = rng.choices([0, 1, 2, 3], weights=[0.35, 0.4, 0.2, 0.05])[0]
    for _ in range(closures):
        open_atoms = [i for i in range(mol.GetNumAtoms()) if free_valence(mol, i, valences) > 0]
        pairs = []
        for a in open_atoms:
            for b in open_atoms:
                pair = (mol.GetAtomWithIdx(a).GetAtomicNum(), mol.GetAtomWithIdx(b).GetAtomicNum())
                if pair in FORBIDDEN_PAIRS:
                    continue
                if a < b and mol.GetBondBetweenAtoms(a, b) is None:
                    path = Chem.GetShortestPath(mol, a, b)
                    if 3 <= len(path) <= 7:
                        pairs.append((a, b))
        if not pairs:
            break
        a, b = rng.choice(pairs)
        room = min(free_valence(mol, a, valences), free_valence(mol, b, valences))
        order = 2 if room >= 2 and rng.random() < 0.3 else 1
        mol.AddBond(a, b, Chem.BondType.DOUBLE if order == 2 else Chem.BondType.SINGLE)
    m = mol.GetMol()
    try:
        Chem.SanitizeMol(m)
    except Exception:
        return None
    smi = Chem.MolToSmiles(m, isomericSmiles=False)
    if not set(smi) <= ALPHABET:
        return None
    return smi


def main():
    out, count = sys.argv[1], int(sys.argv[2])
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 20170530
    rng = random.Random(seed)
    seen = set()
    lines = []
    while len(lines) < count:
        smi = random_molecule(rng)
        if smi is None or smi in seen:
            continue
        seen.add(smi)
        lines.append(smi)
    with open(out, "w", newline="\n") as f:
        for s in lines:
            f.write(s + "\n")


if __name__ == "__main__":
    main()
