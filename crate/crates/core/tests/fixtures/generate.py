#!/usr/bin/env python3
"""Regenerate the synthetic PDB fixtures used by the test suites.

Builds peptides from backbone (phi, psi, omega) torsions and textbook side-chain
geometry with a plain NeRF placement written here in numpy. This builder shares
no code with the Rust crate, so the fixtures act as an independent source of
realistic heavy-atom geometry.

    python3 generate.py        # rewrites the *.pdb files next to this script
"""

import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))

# (atom, parent, grandparent, great-grandparent, bond, angle_deg, torsion)
# torsion is either a float or a string naming a chi ("chi1", "chi2+180", ...).
SIDE = {
    "ALA": [],
    "GLY": [],
    "SER": [("OG", "CB", "CA", "N", 1.42, 111.0, "chi1")],
    "CYS": [("SG", "CB", "CA", "N", 1.81, 114.0, "chi1")],
    "THR": [
        ("OG1", "CB", "CA", "N", 1.43, 109.5, "chi1"),
        ("CG2", "CB", "CA", "N", 1.52, 111.0, "chi1-120"),
    ],
    "VAL": [
        ("CG1", "CB", "CA", "N", 1.53, 110.5, "chi1"),
        ("CG2", "CB", "CA", "N", 1.53, 110.5, "chi1+120"),
    ],
    "LEU": [
        ("CG", "CB", "CA", "N", 1.53, 116.0, "chi1"),
        ("CD1", "CG", "CB", "CA", 1.52, 110.5, "chi2"),
        ("CD2", "CG", "CB", "CA", 1.52, 110.5, "chi2+120"),
    ],
    "ILE": [
        ("CG1", "CB", "CA", "N", 1.53, 110.0, "chi1"),
        ("CG2", "CB", "CA", "N", 1.53, 110.5, "chi1-120"),
        ("CD1", "CG1", "CB", "CA", 1.52, 114.0, "chi2"),
    ],
    "MET": [
        ("CG", "CB", "CA", "N", 1.52, 114.0, "chi1"),
        ("SD", "CG", "CB", "CA", 1.81, 112.7, "chi2"),
        ("CE", "SD", "CG", "CB", 1.79, 100.5, "chi3"),
    ],
    "LYS": [
        ("CG", "CB", "CA", "N", 1.52, 114.0, "chi1"),
        ("CD", "CG", "CB", "CA", 1.52, 111.0, "chi2"),
        ("CE", "CD", "CG", "CB", 1.52, 111.0, "chi3"),
        ("NZ", "CE", "CD", "CG", 1.49, 112.0, "chi4"),
    ],
    "ARG": [
        ("CG", "CB", "CA", "N", 1.52, 114.0, "chi1"),
        ("CD", "CG", "CB", "CA", 1.52, 111.0, "chi2"),
        ("NE", "CD", "CG", "CB", 1.46, 112.0, "chi3"),
        ("CZ", "NE", "CD", "CG", 1.33, 124.0, "chi4"),
        ("NH1", "CZ", "NE", "CD", 1.33, 120.0, 0.0),
        ("NH2", "CZ", "NE", "CD", 1.33, 120.0, 180.0),
    ],
    "ASP": [
        ("CG", "CB", "CA", "N", 1.52, 113.0, "chi1"),
        ("OD1", "CG", "CB", "CA", 1.25, 119.0, "chi2"),
        ("OD2", "CG", "CB", "CA", 1.25, 119.0, "chi2+180"),
    ],
    "ASN": [
        ("CG", "CB", "CA", "N", 1.52, 113.0, "chi1"),
        ("OD1", "CG", "CB", "CA", 1.23, 121.0, "chi2"),
        ("ND2", "CG", "CB", "CA", 1.33, 116.0, "chi2+180"),
    ],
    "GLU": [
        ("CG", "CB", "CA", "N", 1.52, 114.0, "chi1"),
        ("CD", "CG", "CB", "CA", 1.52, 113.0, "chi2"),
        ("OE1", "CD", "CG", "CB", 1.25, 119.0, "chi3"),
        ("OE2", "CD", "CG", "CB", 1.25, 119.0, "chi3+180"),
    ],
    "GLN": [
        ("CG", "CB", "CA", "N", 1.52, 114.0, "chi1"),
        ("CD", "CG", "CB", "CA", 1.52, 113.0, "chi2"),
        ("OE1", "CD", "CG", "CB", 1.23, 121.0, "chi3"),
        ("NE2", "CD", "CG", "CB", 1.33, 117.0, "chi3+180"),
    ],
    "HIS": [
        ("CG", "CB", "CA", "N", 1.50, 114.0, "chi1"),
        ("ND1", "CG", "CB", "CA", 1.38, 122.0, "chi2"),
        ("CD2", "CG", "CB", "CA", 1.36, 131.0, "chi2+180"),
        ("CE1", "ND1", "CG", "CB", 1.32, 109.0, 180.0),
        ("NE2", "CD2", "CG", "CB", 1.37, 107.0, 180.0),
    ],
    "PHE": [
        ("CG", "CB", "CA", "N", 1.50, 114.0, "chi1"),
        ("CD1", "CG", "CB", "CA", 1.39, 120.7, "chi2"),
        ("CD2", "CG", "CB", "CA", 1.39, 120.7, "chi2+180"),
        ("CE1", "CD1", "CG", "CB", 1.39, 120.0, 180.0),
        ("CE2", "CD2", "CG", "CB", 1.39, 120.0, 180.0),
        ("CZ", "CE1", "CD1", "CG", 1.39, 120.0, 0.0),
    ],
    "TYR": [
        ("CG", "CB", "CA", "N", 1.51, 114.0, "chi1"),
        ("CD1", "CG", "CB", "CA", 1.39, 120.8, "chi2"),
        ("CD2", "CG", "CB", "CA", 1.39, 120.8, "chi2+180"),
        ("CE1", "CD1", "CG", "CB", 1.39, 121.2, 180.0),
        ("CE2", "CD2", "CG", "CB", 1.39, 121.2, 180.0),
        ("CZ", "CE1", "CD1", "CG", 1.38, 119.6, 0.0),
        ("OH", "CZ", "CE1", "CD1", 1.38, 119.9, 180.0),
    ],
    "TRP": [
        ("CG", "CB", "CA", "N", 1.50, 114.0, "chi1"),
        ("CD1", "CG", "CB", "CA", 1.37, 127.0, "chi2"),
        ("CD2", "CG", "CB", "CA", 1.43, 126.6, "chi2+180"),
        ("NE1", "CD1", "CG", "CB", 1.38, 110.0, 180.0),
        ("CE2", "CD2", "CG", "CB", 1.41, 107.3, 180.0),
        ("CE3", "CD2", "CG", "CB", 1.40, 133.9, 0.0),
        ("CZ2", "CE2", "CD2", "CG", 1.40, 122.3, 180.0),
        ("CZ3", "CE3", "CD2", "CG", 1.39, 118.8, 180.0),
        ("CH2", "CZ2", "CE2", "CD2", 1.37, 117.5, 0.0),
    ],
    "PRO": [
        ("CG", "CB", "CA", "N", 1.50, 104.5, "chi1"),
        ("CD", "CG", "CB", "CA", 1.51, 105.5, "chi2"),
    ],
    "TPO": [
        ("OG1", "CB", "CA", "N", 1.43, 109.5, "chi1"),
        ("CG2", "CB", "CA", "N", 1.52, 111.0, "chi1-120"),
        ("P", "OG1", "CB", "CA", 1.61, 118.0, "chi2"),
        ("O1P", "P", "OG1", "CB", 1.50, 106.0, 60.0),
        ("O2P", "P", "OG1", "CB", 1.50, 106.0, 180.0),
        ("O3P", "P", "OG1", "CB", 1.50, 106.0, -60.0),
    ],
    "SEP": [
        ("OG", "CB", "CA", "N", 1.42, 111.0, "chi1"),
        ("P", "OG", "CB", "CA", 1.61, 118.0, "chi2"),
        ("O1P", "P", "OG", "CB", 1.50, 106.0, 60.0),
        ("O2P", "P", "OG", "CB", 1.50, 106.0, 180.0),
        ("O3P", "P", "OG", "CB", 1.50, 106.0, -60.0),
    ],
}

# Ring-closing bonds not implied by the parent links above.
CLOSURES = {
    "PHE": [("CZ", "CE2")],
    "TYR": [("CZ", "CE2")],
    "HIS": [("CE1", "NE2")],
    "TRP": [("NE1", "CE2"), ("CZ3", "CH2")],
    "PRO": [("CD", "N")],
}

# Preferred rotamers (chi1, chi2, chi3, chi4) in degrees.
ROTAMER = {
    "PRO": (16.0, -18.0, 0.0, 0.0),
    "TPO": (-60.0, 180.0, 0.0, 0.0),
    "SEP": (-60.0, 180.0, 0.0, 0.0),
    "HIS": (180.0, 80.0, 0.0, 0.0),
    "PHE": (180.0, 80.0, 0.0, 0.0),
    "TYR": (180.0, 80.0, 0.0, 0.0),
    "TRP": (180.0, 90.0, 0.0, 0.0),
    "VAL": (175.0, 0.0, 0.0, 0.0),
    "ASP": (-60.0, -20.0, 0.0, 0.0),
    "ASN": (-60.0, -20.0, 0.0, 0.0),
}
DEFAULT_ROTAMER = (-60.0, 180.0, 180.0, 180.0)

ELEMENT = {"N": "N", "C": "C", "O": "O", "S": "S", "P": "P", "H": "H"}


def place(a, b, c, bond, angle_deg, torsion_deg):
    """Atom D with |D-c| = bond, angle(b, c, D) = angle, dihedral(a, b, c, D) = torsion."""
    angle = np.radians(angle_deg)
    torsion = np.radians(torsion_deg)
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array(
        [
            -bond * np.cos(angle),
            bond * np.sin(angle) * np.cos(torsion),
            bond * np.sin(angle) * np.sin(torsion),
        ]
    )
    return c + np.column_stack([bc, m, n]) @ d2


def dihedral(a, b, c, d):
    b1, b2, b3 = b - a, c - b, d - c
    n1, n2 = np.cross(b1, b2), np.cross(b2, b3)
    y = np.dot(np.cross(n1, n2), b2 / np.linalg.norm(b2))
    return np.degrees(np.arctan2(y, np.dot(n1, n2)))


def resolve_torsion(spec, chis):
    if isinstance(spec, float):
        return spec
    for op in ("+", "-"):
        if op in spec:
            name, off = spec.split(op)
            base = chis[int(name[3:]) - 1]
            return base + float(off) if op == "+" else base - float(off)
    return chis[int(spec[3:]) - 1]


def build_chain(seq, phis, psis, rng, chi_noise, origin):
    """Returns a list of (resname, [(atom, xyz)]) in PDB atom order."""
    n = np.array([0.0, 0.0, 0.0]) + origin
    ca = n + np.array([1.458, 0.0, 0.0])
    ang = np.radians(111.2)
    c = ca + 1.525 * np.array([-np.cos(ang), np.sin(ang), 0.0])
    residues = []
    for i, name in enumerate(seq):
        atoms = {"N": n, "CA": ca, "C": c}
        if i + 1 < len(seq):
            n_next = place(n, ca, c, 1.329, 116.2, psis[i])
        else:
            n_next = place(n, ca, c, 1.329, 116.2, psis[i])
        atoms["O"] = place(n_next, ca, c, 1.231, 120.5, 180.0)
        if name != "GLY":
            atoms["CB"] = place(c, n, ca, 1.53, 110.5, -122.5)
            rot = ROTAMER.get(name, DEFAULT_ROTAMER)
            # Proline keeps its ring-closing chis.
            damp = 0.0 if name == "PRO" else 1.0
            chis = [x + damp * rng.normal(0.0, chi_noise) for x in rot]
            for atom, parent, gp, ggp, bond, angle, tors in SIDE[name]:
                t = resolve_torsion(tors, chis)
                atoms[atom] = place(atoms[ggp], atoms[gp], atoms[parent], bond, angle, t)
        order = ["N", "CA", "C", "O"] + (["CB"] if name != "GLY" else []) + [s[0] for s in SIDE[name]]
        residues.append((name, [(a, atoms[a]) for a in order]))
        if i + 1 < len(seq):
            ca_next = place(ca, c, n_next, 1.458, 121.7, 180.0)
            c_next = place(c, n_next, ca_next, 1.525, 111.2, phis[i + 1])
            n, ca, c = n_next, ca_next, c_next
    return residues


def bonded_pairs(chain):
    bonds = set()
    for i, (name, atoms) in enumerate(chain):
        names = {a for a, _ in atoms}
        for a, b in [("N", "CA"), ("CA", "C"), ("C", "O"), ("CA", "CB")]:
            if a in names and b in names:
                bonds.add(((i, a), (i, b)))
        for atom, parent, *_ in SIDE[name]:
            bonds.add(((i, parent), (i, atom)))
        for a, b in CLOSURES.get(name, []):
            bonds.add(((i, a), (i, b)))
        if i + 1 < len(chain):
            bonds.add(((i, "C"), (i + 1, "N")))
    return bonds


def min_nonbonded(chains):
    """Smallest distance among pairs that are neither 1-2 nor 1-3 bonded."""
    nodes, coords, adj = [], [], {}
    for ci, chain in enumerate(chains):
        for ri, (_, atoms) in enumerate(chain):
            for a, x in atoms:
                nodes.append((ci, ri, a))
                coords.append(x)
        for (r1, a1), (r2, a2) in bonded_pairs(chain):
            u, v = (ci, r1, a1), (ci, r2, a2)
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
    coords = np.array(coords)
    close = set()
    for u in nodes:
        for v in adj.get(u, ()):
            close.add((u, v))
            for w in adj.get(v, ()):
                close.add((u, w))
    best = np.inf
    for i in range(len(nodes)):
        d = np.linalg.norm(coords[i + 1 :] - coords[i], axis=1)
        for k in np.argsort(d):
            j = i + 1 + k
            if (nodes[i], nodes[j]) in close:
                continue
            best = min(best, d[k])
            break
    return best


def pdb_line(serial, atom, res, chain, resseq, xyz, record="ATOM", altloc=" "):
    element = ELEMENT[atom[0]]
    name = f" {atom:<3}" if len(atom) < 4 else atom
    return (
        f"{record:<6}{serial:>5} {name:<4}{altloc}{res:>3} {chain}{resseq:>4}    "
        f"{xyz[0]:>8.3f}{xyz[1]:>8.3f}{xyz[2]:>8.3f}{1.0:>6.2f}{0.0:>6.2f}          {element:>2}"
    )


def write_ensemble(path, frames, chain_ids, extras=None):
    lines = []
    for k, chains in enumerate(frames):
        lines.append(f"MODEL     {k + 1:>4}")
        serial = 1
        for chain_id, chain in zip(chain_ids, chains):
            for ri, (name, atoms) in enumerate(chain):
                for atom, xyz in atoms:
                    lines.append(pdb_line(serial, atom, name, chain_id, ri + 1, xyz))
                    serial += 1
                    if extras:
                        for extra in extras(chain_id, ri, len(chain), name, atom, xyz):
                            lines.append(extra.replace("SERIAL", f"{serial:>5}"))
                            serial += 1
            lines.append(f"TER   {serial:>5}      {chain[-1][0]:>3} {chain_id}{len(chain):>4}")
            serial += 1
        if extras:
            lines.append(pdb_line(serial, "O", "HOH", "W", 1, np.array([30.0, 30.0, 30.0]), "HETATM"))
        lines.append("ENDMDL")
    lines.append("END")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def sample_frames(seq, n_frames, rng, phi, psi, spread, origin=np.zeros(3), min_dist=2.4):
    frames = []
    while len(frames) < n_frames:
        phis = [(-65.0 if r == "PRO" else phi) + rng.normal(0.0, spread) for r in seq]
        psis = [psi + rng.normal(0.0, spread) for _ in seq]
        chain = build_chain(seq, phis, psis, rng, 8.0, origin)
        if min_nonbonded([chain]) >= min_dist:
            frames.append(chain)
    return frames


def main():
    rng = np.random.default_rng(20230131)

    seq = "GLY PRO SER GLU LEU PHE LYS TRP ASP ALA THR VAL HIS ARG TYR GLN ASN MET CYS ILE GLY".split()
    frames = sample_frames(seq, 10, rng, -62.0, -41.0, 6.0)
    write_ensemble(os.path.join(HERE, "peptide_ensemble.pdb"), [[f] for f in frames], ["A"])

    glu = ["GLU"] * 20
    helix = build_chain(glu, [-57.0] * 20, [-47.0] * 20, np.random.default_rng(7), 0.0, np.zeros(3))
    write_ensemble(os.path.join(HERE, "polyglu_helix.pdb"), [[helix]], ["A"])

    seq_a = "ALA SER TPO GLU LYS".split()
    seq_b = "GLY SEP LEU ASP VAL ALA".split()
    frames_a = sample_frames(seq_a, 3, rng, -120.0, 130.0, 8.0)
    frames_b = sample_frames(seq_b, 3, rng, -120.0, 130.0, 8.0, origin=np.array([0.0, 0.0, 12.0]))
    complex_frames = [[a, b] for a, b in zip(frames_a, frames_b)]
    for chains in complex_frames:
        assert min_nonbonded(chains) >= 2.4

    def extras(chain_id, ri, length, resname, atom, xyz):
        out = []
        if atom == "CA":
            h = xyz + np.array([0.0, 0.0, 1.09])
            out.append(pdb_line(0, "HA", resname, chain_id, ri + 1, h).replace("    0", "SERIAL", 1))
        if atom == "N" and ri > 0:
            h = xyz + np.array([0.0, 1.01, 0.0])
            out.append(pdb_line(0, "H", resname, chain_id, ri + 1, h).replace("    0", "SERIAL", 1))
        if atom == "O" and ri == length - 1:
            oxt = xyz + np.array([1.1, 0.6, 0.0])
            out.append(pdb_line(0, "OXT", resname, chain_id, ri + 1, oxt).replace("    0", "SERIAL", 1))
        if atom == "CB" and resname == "LEU":
            alt = xyz + np.array([0.3, 0.0, 0.0])
            out.append(
                pdb_line(0, "CB", resname, chain_id, ri + 1, alt, altloc="B").replace("    0", "SERIAL", 1)
            )
        return out

    write_ensemble(os.path.join(HERE, "complex_h.pdb"), complex_frames, ["A", "B"], extras)

    for closure_check in frames[:1]:
        for name, atoms in closure_check:
            pos = dict(atoms)
            for a, b in CLOSURES.get(name, []):
                print(name, a, b, round(float(np.linalg.norm(pos[a] - pos[b])), 3))


if __name__ == "__main__":
    main()
