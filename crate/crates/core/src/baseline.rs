//! Naive in-memory geometric hashing, used as a correctness oracle.
//!
//! `AllTriples` enumerates a frame for every ordered non-collinear atom
//! triple, as in textbook geometric hashing. `PerResidue` uses the same
//! residue frames and clipping radius as the disk engine, so its output
//! must equal [`crate::matcher::match_query`] exactly. Matching here is a
//! hash-table lookup per query cell rather than a sorted merge.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{frame_from_triple, AnchorRole, Point3, RigidFrame};
use crate::grid::{cell_of, CellIndex, GridParams, RefId};
use crate::ingest::{AtomRecord, Patch, Protein};
use crate::matcher::{MatchResult, QUERY_STRUCTURE_KEY};
use crate::preprocess::residue_frames;

pub const DEFAULT_TRIPLE_CAP: usize = 50;
pub const DEFAULT_ATOM_CAP: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    AllTriples,
    PerResidue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleFrameId {
    pub structure_key: u32,
    pub atom_triple: [u32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameId {
    Triple(TripleFrameId),
    Residue(RefId),
}

#[derive(Debug, Clone, Copy)]
pub struct NaiveCaps {
    /// Largest structure allowed in `AllTriples` mode.
    pub max_triple_atoms: usize,
    /// Largest structure allowed in either mode.
    pub max_atoms: usize,
}

impl Default for NaiveCaps {
    fn default() -> Self {
        NaiveCaps {
            max_triple_atoms: DEFAULT_TRIPLE_CAP,
            max_atoms: DEFAULT_ATOM_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NaiveFrame {
    pub id: FrameId,
    pub frame: RigidFrame,
    anchors: [u32; 3],
}

impl NaiveFrame {
    fn coords(&self, atom: &AtomRecord) -> Point3 {
        match self.anchors.iter().position(|&a| a == atom.atom_ordinal) {
            Some(0) => self.frame.anchor_coords(AnchorRole::Origin, atom.position),
            Some(1) => self.frame.anchor_coords(AnchorRole::Axis, atom.position),
            Some(2) => self.frame.anchor_coords(AnchorRole::Plane, atom.position),
            _ => self.frame.to_frame_coords(atom.position),
        }
    }
}

fn check_caps(atoms: &[AtomRecord], mode: FrameMode, caps: &NaiveCaps) -> Result<()> {
    if atoms.len() > caps.max_atoms {
        return Err(Error::CapExceeded {
            what: "atom count",
            got: atoms.len(),
            cap: caps.max_atoms,
        });
    }
    if mode == FrameMode::AllTriples && atoms.len() > caps.max_triple_atoms {
        return Err(Error::CapExceeded {
            what: "atom count for all-triples enumeration",
            got: atoms.len(),
            cap: caps.max_triple_atoms,
        });
    }
    Ok(())
}

pub fn naive_frames(atoms: &[AtomRecord], structure_key: u32, mode: FrameMode, caps: &NaiveCaps) -> Result<Vec<NaiveFrame>> {
    check_caps(atoms, mode, caps)?;
    let mut out = Vec::new();
    match mode {
        FrameMode::PerResidue => {
            for rf in residue_frames(atoms).frames {
                out.push(NaiveFrame {
                    id: FrameId::Residue(RefId::new(structure_key, rf.residue_ordinal)),
                    frame: rf.frame,
                    anchors: rf.anchors,
                });
            }
        }
        FrameMode::AllTriples => {
            for a in atoms {
                for b in atoms {
                    for c in atoms {
                        let ords = [a.atom_ordinal, b.atom_ordinal, c.atom_ordinal];
                        if ords[0] == ords[1] || ords[0] == ords[2] || ords[1] == ords[2] {
                            continue;
                        }
                        if let Ok(frame) = frame_from_triple(a.position, b.position, c.position) {
                            out.push(NaiveFrame {
                                id: FrameId::Triple(TripleFrameId {
                                    structure_key,
                                    atom_triple: ords,
                                }),
                                frame,
                                anchors: ords,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveMatch {
    pub db_frame: FrameId,
    pub query_frame: FrameId,
    pub score: f64,
    pub matched_count: u64,
    pub patch_id: String,
    pub source_protein_id: String,
}

impl NaiveMatch {
    /// The engine-shaped result; `None` for triple frames.
    pub fn to_match_result(&self) -> Option<MatchResult> {
        match (self.db_frame, self.query_frame) {
            (FrameId::Residue(db), FrameId::Residue(q)) => Some(MatchResult {
                db_ref_id: db,
                query_ref_id: q,
                score: self.score,
                matched_count: self.matched_count,
                patch_id: self.patch_id.clone(),
                source_protein_id: self.source_protein_id.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NaiveOutcome {
    pub matches: Vec<NaiveMatch>,
    pub query_frames: usize,
    pub patch_frames: usize,
    /// (frame, atom) pairs stored for all patches.
    pub stored_entries: u64,
    /// Clipping radius applied to the query (infinite for all-triples).
    pub mps: f64,
}

impl NaiveOutcome {
    pub fn match_results(&self) -> Vec<MatchResult> {
        self.matches.iter().filter_map(NaiveMatch::to_match_result).collect()
    }
}

struct IndexedPatch<'a> {
    patch: &'a Patch,
    frames: Vec<NaiveFrame>,
}

/// Matches `query` against `patches` entirely in memory.
pub fn naive_match(query: &Protein, patches: &[Patch], params: &GridParams, mode: FrameMode, tau: f64, caps: &NaiveCaps) -> Result<NaiveOutcome> {
    params.validate()?;
    check_caps(&query.atoms, mode, caps)?;

    // patches without frames or with out-of-extent atoms are left out and
    // do not consume a structure key, mirroring the database build
    let mut indexed: Vec<IndexedPatch> = Vec::new();
    let mut cells: HashMap<CellIndex, Vec<usize>> = HashMap::new();
    // flat frame index -> (patch, frame within patch)
    let mut slots: Vec<(usize, usize)> = Vec::new();
    let mut mps: f64 = 0.0;
    let mut stored = 0u64;
    for patch in patches {
        let key = indexed.len() as u32;
        let frames = naive_frames(&patch.atoms, key, mode, caps)?;
        if frames.is_empty() {
            continue;
        }
        let mut placed = Vec::with_capacity(frames.len() * patch.atoms.len());
        let mut radius: f64 = 0.0;
        let mut ok = true;
        'outer: for (fi, f) in frames.iter().enumerate() {
            for atom in &patch.atoms {
                let q = f.coords(atom);
                radius = radius.max(q.norm());
                match cell_of(q, params) {
                    Ok(c) => placed.push((c, fi)),
                    Err(_) => {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        let pi = indexed.len();
        let base = slots.len();
        slots.extend((0..frames.len()).map(|fi| (pi, fi)));
        for (c, fi) in placed {
            cells.entry(c).or_default().push(base + fi);
            stored += 1;
        }
        mps = mps.max(radius);
        indexed.push(IndexedPatch { patch, frames });
    }

    let clip = match mode {
        FrameMode::PerResidue => mps,
        FrameMode::AllTriples => f64::INFINITY,
    };
    let query_frames = naive_frames(&query.atoms, QUERY_STRUCTURE_KEY, mode, caps)?;
    if query_frames.is_empty() {
        return Err(Error::NoValidFrame {
            id: query.protein_id.clone(),
        });
    }

    let mut matches = Vec::new();
    let mut counts = vec![0u64; slots.len()];
    let mut touched = Vec::new();
    for qf in &query_frames {
        let occupied: HashSet<CellIndex> = query
            .atoms
            .iter()
            .map(|a| qf.coords(a))
            .filter(|q| q.norm() <= clip)
            .filter_map(|q| cell_of(q, params).ok())
            .collect();
        for c in &occupied {
            if let Some(hits) = cells.get(c) {
                for &slot in hits {
                    if counts[slot] == 0 {
                        touched.push(slot);
                    }
                    counts[slot] += 1;
                }
            }
        }
        for slot in touched.drain(..) {
            let count = std::mem::take(&mut counts[slot]);
            let (pi, fi) = slots[slot];
            let ip = &indexed[pi];
            let score = count as f64 / ip.patch.atoms.len() as f64;
            if score >= tau {
                matches.push(NaiveMatch {
                    db_frame: ip.frames[fi].id,
                    query_frame: qf.id,
                    score,
                    matched_count: count,
                    patch_id: ip.patch.patch_id.clone(),
                    source_protein_id: ip.patch.source_protein_id.clone(),
                });
            }
        }
    }
    matches.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.patch_id.cmp(&b.patch_id))
            .then_with(|| a.query_frame.cmp(&b.query_frame))
            .then_with(|| a.db_frame.cmp(&b.db_frame))
    });
    Ok(NaiveOutcome {
        matches,
        query_frames: query_frames.len(),
        patch_frames: indexed.iter().map(|p| p.frames.len()).sum(),
        stored_entries: stored,
        mps: clip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PatchOrigin;

    fn atom(ord: u32, name: &str, res: u32, p: Point3) -> AtomRecord {
        AtomRecord {
            atom_ordinal: ord,
            element: "C".into(),
            atom_name: name.into(),
            residue_ordinal: res,
            residue_name: "GLY".into(),
            chain_id: 'A',
            residue_seq: res as i32,
            position: p,
        }
    }

    #[test]
    fn triple_counts() {
        let three: Vec<_> = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
            .iter()
            .enumerate()
            .map(|(i, p)| atom(i as u32, "X", 0, Point3::from_array(*p)))
            .collect();
        let f = naive_frames(&three, 0, FrameMode::AllTriples, &NaiveCaps::default()).unwrap();
        assert_eq!(f.len(), 6);

        let line: Vec<_> = (0..5)
            .map(|i| atom(i, "X", 0, Point3::new(i as f64, 0.0, 0.0)))
            .collect();
        assert!(naive_frames(&line, 0, FrameMode::AllTriples, &NaiveCaps::default())
            .unwrap()
            .is_empty());

        let many: Vec<_> = (0..60)
            .map(|i| atom(i, "X", 0, Point3::new(i as f64, (i * i) as f64, 0.0)))
            .collect();
        assert!(matches!(
            naive_frames(&many, 0, FrameMode::AllTriples, &NaiveCaps::default()),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn self_match_and_empty_database() {
        let atoms = vec![
            atom(0, "N", 0, Point3::new(-1.2, 0.6, 0.1)),
            atom(1, "CA", 0, Point3::new(0.0, 0.0, 0.0)),
            atom(2, "C", 0, Point3::new(1.3, 0.7, -0.2)),
            atom(3, "O", 0, Point3::new(1.6, 1.9, 0.4)),
        ];
        let protein = Protein::new("Q", atoms);
        let patch = Patch::from_protein(&protein, PatchOrigin::SiteRecord);
        let out = naive_match(&protein, &[patch], &GridParams::default(), FrameMode::PerResidue, 1.0, &NaiveCaps::default()).unwrap();
        assert_eq!(out.matches.len(), 1);
        assert_eq!(out.matches[0].score, 1.0);
        let none = naive_match(&protein, &[], &GridParams::default(), FrameMode::PerResidue, 0.0, &NaiveCaps::default()).unwrap();
        assert!(none.matches.is_empty());
    }
}
