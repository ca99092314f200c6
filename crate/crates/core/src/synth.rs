//! Seeded synthetic data: proteins, matching instances, annotated corpora
//! and template sets. Everything is driven by a ChaCha8 stream so a seed
//! reproduces the same data on every platform.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Point3, RigidMotion};
use crate::grid::GridParams;
use crate::ingest::{AtomRecord, Patch, PatchOrigin, Protein, SiteDefinition, SiteResidue};
use crate::preprocess::residue_frames;

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

const RESIDUE_NAMES: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET", "PHE", "PRO", "SER",
    "THR", "TRP", "TYR", "VAL",
];
const SIDE_NAMES: [&str; 4] = ["CB", "CG", "CD", "CE"];

pub fn unit_vector<R: Rng>(rng: &mut R) -> Point3 {
    loop {
        let p = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = p.norm();
        if (0.1..=1.0).contains(&n) {
            return p * (1.0 / n);
        }
    }
}

/// Uniformly random rotation (Shoemake) plus a translation with components
/// in `[-max_translation, max_translation]`.
pub fn random_motion<R: Rng>(rng: &mut R, max_translation: f64) -> RigidMotion {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let q = [
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    ];
    let t = if max_translation > 0.0 {
        Point3::new(
            rng.random_range(-max_translation..=max_translation),
            rng.random_range(-max_translation..=max_translation),
            rng.random_range(-max_translation..=max_translation),
        )
    } else {
        Point3::ZERO
    };
    RigidMotion::from_quaternion(q, t)
}

pub fn apply_motion(protein: &Protein, motion: &RigidMotion) -> Protein {
    let mut out = protein.clone();
    for a in &mut out.atoms {
        a.position = motion.apply(a.position);
    }
    out
}

fn atom(ordinal: u32, name: &str, residue: u32, residue_name: &str, p: Point3) -> AtomRecord {
    AtomRecord {
        atom_ordinal: ordinal,
        element: name[..1].to_string(),
        atom_name: name.to_string(),
        residue_ordinal: residue,
        residue_name: residue_name.to_string(),
        chain_id: 'A',
        residue_seq: residue as i32 + 1,
        position: p,
    }
}

/// A random chain: Cα atoms 3.8 Å apart, each residue carrying N, CA, C,
/// O and up to four side-chain atoms.
pub fn random_protein<R: Rng>(rng: &mut R, id: &str, residues: usize) -> Protein {
    let mut atoms = Vec::new();
    let mut ca = Point3::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
    );
    for r in 0..residues as u32 {
        if r > 0 {
            ca = ca + unit_vector(rng) * 3.8;
        }
        let name = *RESIDUE_NAMES.choose(rng).unwrap();
        let u_n = unit_vector(rng);
        let u_c = loop {
            let u = unit_vector(rng);
            if u_n.dot(&u) < 0.5 {
                break u;
            }
        };
        let c = ca + u_c * 1.52;
        let mut push = |n: &str, p: Point3| {
            let ord = atoms.len() as u32;
            atoms.push(atom(ord, n, r, name, p));
        };
        push("N", ca + u_n * 1.46);
        push("CA", ca);
        push("C", c);
        push("O", c + unit_vector(rng) * 1.23);
        let mut prev = ca;
        let side = if name == "GLY" { 0 } else { rng.random_range(1..=4) };
        for s in SIDE_NAMES.iter().take(side) {
            prev = prev + unit_vector(rng) * 1.53;
            push(s, prev);
        }
    }
    Protein::new(id, atoms)
}

/// Atoms of the given residues, in protein order.
pub fn patch_from_residues(protein: &Protein, residues: &[u32], patch_id: &str, origin: PatchOrigin) -> Patch {
    Patch {
        patch_id: patch_id.to_string(),
        source_protein_id: protein.protein_id.clone(),
        atoms: protein
            .atoms
            .iter()
            .filter(|a| residues.contains(&a.residue_ordinal))
            .cloned()
            .collect(),
        origin,
    }
}

fn residue_sizes(protein: &Protein) -> Vec<usize> {
    let mut sizes = vec![0; protein.residue_count];
    for a in &protein.atoms {
        sizes[a.residue_ordinal as usize] += 1;
    }
    sizes
}

/// Random residues of `protein` whose atoms total at most `max_atoms`.
fn pick_residues<R: Rng>(rng: &mut R, protein: &Protein, max_atoms: usize) -> Vec<u32> {
    let sizes = residue_sizes(protein);
    let mut order: Vec<u32> = (0..protein.residue_count as u32).collect();
    order.shuffle(rng);
    let want = rng.random_range(1..=order.len().min(8));
    let mut picked = Vec::new();
    let mut total = 0;
    for r in order {
        if picked.len() == want {
            break;
        }
        if total + sizes[r as usize] <= max_atoms {
            total += sizes[r as usize];
            picked.push(r);
        }
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceSizes {
    pub max_query_residues: usize,
    pub max_patches: usize,
    pub max_patch_atoms: usize,
}

impl Default for InstanceSizes {
    fn default() -> Self {
        InstanceSizes {
            max_query_residues: 30,
            max_patches: 20,
            max_patch_atoms: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub query: Protein,
    pub patches: Vec<Patch>,
    pub params: GridParams,
}

/// A query plus patches: some cut from the query (some moved rigidly,
/// some jittered), some from unrelated chains, a few missing anchors.
pub fn random_instance<R: Rng>(rng: &mut R, sizes: &InstanceSizes) -> Instance {
    let delta = *[0.5, 1.0, 2.0].choose(rng).unwrap();
    let params = GridParams::new(delta, 16).expect("valid synthetic params");
    let n_res = rng.random_range(1..=sizes.max_query_residues.max(1));
    let mut query = random_protein(rng, "QRY0", n_res);
    // an occasional incomplete residue, never the first
    if n_res > 2 && rng.random_bool(0.3) {
        let r = rng.random_range(1..n_res as u32);
        query.atoms.retain(|a| !(a.residue_ordinal == r && a.atom_name == "N"));
    }
    let mut patches = Vec::new();
    let n_patches = rng.random_range(1..=sizes.max_patches.max(1));
    for i in 0..n_patches {
        let id = format!("P{i:02}");
        let kind = rng.random_range(0..10);
        let mut patch = if kind < 6 {
            let res = pick_residues(rng, &query, sizes.max_patch_atoms);
            patch_from_residues(&query, &res, &id, PatchOrigin::SiteRecord)
        } else {
            let len = rng.random_range(1..=12);
            let other = random_protein(rng, &format!("X{i:03}"), len);
            let res = pick_residues(rng, &other, sizes.max_patch_atoms);
            patch_from_residues(&other, &res, &id, PatchOrigin::SiteRecord)
        };
        match kind {
            0 | 1 => {
                let m = random_motion(rng, 30.0);
                for a in &mut patch.atoms {
                    a.position = m.apply(a.position);
                }
            }
            2 => {
                for a in &mut patch.atoms {
                    a.position = a.position + unit_vector(rng) * rng.random_range(0.0..0.4);
                }
            }
            9 if patch.atoms.len() > 1 => patch.atoms.retain(|a| a.atom_name != "CA"),
            _ => {}
        }
        if !patch.atoms.is_empty() {
            patches.push(patch);
        }
    }
    Instance { query, patches, params }
}

/// A structure file's worth of synthetic data.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub protein: Protein,
    pub sites: Vec<SiteDefinition>,
}

/// `proteins` chains of `residues` residues, each with one to three SITE
/// definitions of two to five residues.
pub fn synthetic_corpus<R: Rng>(rng: &mut R, proteins: usize, residues: usize) -> Vec<CorpusEntry> {
    (0..proteins)
        .map(|i| {
            let protein = random_protein(rng, &format!("S{i:03}"), residues);
            let n_sites = rng.random_range(1..=3);
            let sites = (0..n_sites)
                .map(|s| {
                    let mut res: Vec<u32> = (0..residues as u32).collect();
                    res.shuffle(rng);
                    res.truncate(rng.random_range(2..=5).min(residues));
                    res.sort_unstable();
                    SiteDefinition {
                        site_id: format!("AC{}", s + 1),
                        residues: res
                            .into_iter()
                            .map(|r| {
                                let a = protein.atoms.iter().find(|a| a.residue_ordinal == r).unwrap();
                                SiteResidue {
                                    residue_name: a.residue_name.clone(),
                                    chain_id: a.chain_id,
                                    residue_seq: a.residue_seq,
                                }
                            })
                            .collect(),
                        unparsable: 0,
                    }
                })
                .collect();
            CorpusEntry { protein, sites }
        })
        .collect()
}

/// Template-file text (`id residue seq atom x y z`) for `patches`.
pub fn format_template_file(patches: &[Patch]) -> String {
    let mut s = String::from("# template residue seq atom x y z\n");
    for p in patches {
        for a in &p.atoms {
            writeln!(
                s,
                "{} {} {} {} {:.4} {:.4} {:.4}",
                p.patch_id, a.residue_name, a.residue_seq, a.atom_name, a.position.x, a.position.y, a.position.z
            )
            .unwrap();
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct TemplateScenario {
    pub site_patches: Vec<Patch>,
    pub templates: Vec<Patch>,
}

fn ca_cb_patch<R: Rng>(rng: &mut R, protein: &Protein, id: &str, origin: PatchOrigin) -> Patch {
    let res = pick_residues(rng, protein, 60);
    let mut p = patch_from_residues(protein, &res, id, origin);
    p.atoms.retain(|a| a.atom_name == "CA" || a.atom_name == "CB");
    p
}

/// `templates` Cα/Cβ templates of which `duplicates` repeat a site patch
/// (coordinates rounded to the template file's precision).
pub fn template_scenario<R: Rng>(rng: &mut R, templates: usize, duplicates: usize) -> TemplateScenario {
    assert!(duplicates <= templates);
    let mut site_patches = Vec::new();
    let mut out = Vec::new();
    for i in 0..templates {
        let protein = random_protein(rng, &format!("T{i:03}"), 10);
        if i < duplicates {
            let site = ca_cb_patch(rng, &protein, &format!("{}_0", protein.protein_id), PatchOrigin::SiteRecord);
            let mut t = site.clone();
            t.patch_id = format!("{}_t", protein.protein_id);
            t.origin = PatchOrigin::Template;
            for a in &mut t.atoms {
                a.position = Point3::from_array(a.position.to_array().map(|v| (v * 1e4).round() / 1e4));
            }
            site_patches.push(site);
            out.push(t);
        } else {
            out.push(ca_cb_patch(rng, &protein, &format!("{}_t", protein.protein_id), PatchOrigin::Template));
        }
    }
    out.shuffle(rng);
    TemplateScenario {
        site_patches,
        templates: out,
    }
}

/// `n` single-residue patches (N, CA, C, O) with ids `{prefix}{i}`.
pub fn tiny_patches<R: Rng>(rng: &mut R, n: usize, prefix: &str, origin: PatchOrigin) -> Vec<Patch> {
    (0..n)
        .map(|i| {
            let mut p = random_protein(rng, &format!("{prefix}{i}"), 1);
            p.atoms.truncate(4);
            Patch::from_protein(&p, origin)
        })
        .collect()
}

/// A query laid out so every frame coordinate that survives clipping sits
/// well inside its cell, plus patches cut from it.
#[derive(Debug, Clone)]
pub struct MarginInstance {
    pub query: Protein,
    pub patches: Vec<Patch>,
    pub params: GridParams,
}

/// Rounds to the nearest value ≡ δ/8 (mod δ/4).
fn snap(v: f64, delta: f64) -> f64 {
    let q = delta / 4.0;
    q * (v / q).floor() + delta / 8.0
}

/// Builds a query in clusters of up to four residues. Inside a cluster all
/// residue frames share one orientation; frame origins are offset from a
/// common lattice by distinct quarter-cell shifts per axis and every
/// nonzero local coordinate is an odd multiple of δ/8, so each frame
/// coordinate stays at least δ/8 from a cell boundary. Clusters are far
/// enough apart that cross-cluster pairs are clipped, and a decoy patch
/// pushes the clipping radius clear of every in-cluster norm.
pub fn margin_instance<R: Rng>(rng: &mut R, delta: f64, clusters: usize) -> MarginInstance {
    let params = GridParams::new(delta, 16).expect("valid synthetic params");
    let mut atoms: Vec<AtomRecord> = Vec::new();
    let mut cluster_residues: Vec<Vec<u32>> = Vec::new();
    let mut spread = 0.0f64;
    let mut next_res = 0u32;
    let spacing_guess = 120.0 + 40.0 * delta;
    for c in 0..clusters {
        let rot = random_motion(rng, 0.0);
        let origin = Point3::new(c as f64 * spacing_guess, 0.0, 0.0);
        let n = rng.random_range(1..=4);
        let mut perms: [[usize; 4]; 3] = [[0, 1, 2, 3]; 3];
        for p in &mut perms {
            p.shuffle(rng);
        }
        let reach = (5.0 / delta).ceil() as i64;
        let mut members = Vec::new();
        for ((&px, &py), &pz) in perms[0].iter().zip(&perms[1]).zip(&perms[2]).take(n) {
            let lattice = Point3::new(
                (rng.random_range(-reach..=reach) as f64 + px as f64 * 0.25) * delta,
                (rng.random_range(-reach..=reach) as f64 + py as f64 * 0.25) * delta,
                (rng.random_range(-reach..=reach) as f64 + pz as f64 * 0.25) * delta,
            );
            let res_origin = origin + rot.apply(lattice);
            let name = *RESIDUE_NAMES.choose(rng).unwrap();
            let mut local = vec![
                ("N", Point3::new(snap(1.46, delta), 0.0, 0.0)),
                ("CA", Point3::ZERO),
                ("C", Point3::new(snap(-0.5, delta), snap(1.4, delta), 0.0)),
            ];
            for name in ["O", "CB", "CG"].iter().take(rng.random_range(1..=3)) {
                let v = unit_vector(rng) * rng.random_range(1.5..3.0);
                local.push((name, Point3::new(snap(v.x, delta), snap(v.y, delta), snap(v.z, delta))));
            }
            for (aname, l) in local {
                let ord = atoms.len() as u32;
                atoms.push(atom(ord, aname, next_res, name, res_origin + rot.apply(l)));
            }
            members.push(next_res);
            next_res += 1;
        }
        cluster_residues.push(members);
    }
    let query = Protein::new("MRG0", atoms);

    // largest in-cluster frame-coordinate norm
    let frames = residue_frames(&query.atoms).frames;
    let cluster_of = |r: u32| cluster_residues.iter().position(|m| m.contains(&r)).unwrap();
    for f in &frames {
        let c = cluster_of(f.residue_ordinal);
        for a in query.atoms.iter().filter(|a| cluster_of(a.residue_ordinal) == c) {
            spread = spread.max(f.coords(a).norm());
        }
    }

    let mut patches = Vec::new();
    for (c, members) in cluster_residues.iter().enumerate() {
        for k in 0..rng.random_range(1..=3) {
            let mut pick: Vec<u32> = members.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
            if pick.is_empty() {
                pick.push(*members.choose(rng).unwrap());
            }
            patches.push(patch_from_residues(&query, &pick, &format!("M{c}_{k}"), PatchOrigin::SiteRecord));
        }
    }
    let decoy_radius = spread + 2.0 + rng.random_range(0.0..1.0);
    let decoy = Protein::new(
        "DCOY",
        vec![
            atom(0, "N", 0, "GLY", Point3::new(1.46, 0.0, 0.0)),
            atom(1, "CA", 0, "GLY", Point3::ZERO),
            atom(2, "C", 0, "GLY", Point3::new(-0.5, 1.4, 0.0)),
            atom(3, "O", 0, "GLY", Point3::new(0.0, 0.0, decoy_radius)),
        ],
    );
    patches.push(Patch::from_protein(&decoy, PatchOrigin::Template));
    MarginInstance { query, patches, params }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginCheck {
    /// Smallest distance of an unclipped frame coordinate to a cell
    /// boundary, ignoring the exact zeros of a frame's own anchors.
    pub min_margin: f64,
    /// Smallest |norm − mps| over all (frame, atom) pairs.
    pub min_clip_gap: f64,
}

/// Measures how close the query's frame coordinates come to cell
/// boundaries and to the clipping radius.
pub fn boundary_margin(query: &Protein, params: &GridParams, mps: f64) -> MarginCheck {
    let mut out = MarginCheck {
        min_margin: f64::INFINITY,
        min_clip_gap: f64::INFINITY,
    };
    for f in residue_frames(&query.atoms).frames {
        for a in &query.atoms {
            let q = f.coords(a);
            let n = q.norm();
            out.min_clip_gap = out.min_clip_gap.min((n - mps).abs());
            if n > mps {
                continue;
            }
            let exact = match f.anchors.iter().position(|&o| o == a.atom_ordinal) {
                Some(role) => 3 - role,
                None => 0,
            };
            for v in &q.to_array()[..3 - exact] {
                let t = v / params.delta;
                let frac = t - t.floor();
                out.min_margin = out.min_margin.min(frac.min(1.0 - frac) * params.delta);
            }
        }
    }
    out
}
