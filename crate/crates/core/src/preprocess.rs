//! Per-residue reference frames and construction of the patch database.
//!
//! Every patch contributes one frame per residue that carries CA, N and C
//! atoms. Each patch atom is transformed into each of the patch's frames and
//! bucketed into a grid cell, so a patch with n atoms and m frames stores
//! exactly n·m entries.
//!
//! A database directory contains the grid (`MANIFEST` + `run-*.bin`), plus
//! `patch_meta.tsv` (structure_key, patch_id, source_protein_id, n, m) and
//! `db_params.tsv` (delta, bits_per_axis, mps).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fsutil::{self, DirLock};
use crate::geometry::{frame_from_triple, AnchorRole, Point3, RigidFrame};
use crate::grid::{cell_of, CellEntry, CellIndex, DiskGrid, GridParams, RefId, MANIFEST_FILE};
use crate::ingest::{AtomRecord, Patch};

pub const PATCH_META_FILE: &str = "patch_meta.tsv";
pub const DB_PARAMS_FILE: &str = "db_params.tsv";
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 22;

/// Patches per parallel work unit while streaming into the run builder.
const PATCH_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidueFrame {
    pub residue_ordinal: u32,
    /// Atom ordinals of the CA, N and C anchors.
    pub anchors: [u32; 3],
    pub frame: RigidFrame,
}

impl ResidueFrame {
    /// Frame coordinates of `atom`; the frame's own anchors get their
    /// exact canonical coordinates.
    pub fn coords(&self, atom: &AtomRecord) -> Point3 {
        let role = match self.anchors.iter().position(|&a| a == atom.atom_ordinal) {
            Some(0) => Some(AnchorRole::Origin),
            Some(1) => Some(AnchorRole::Axis),
            Some(2) => Some(AnchorRole::Plane),
            _ => None,
        };
        match role {
            Some(r) => self.frame.anchor_coords(r, atom.position),
            None => self.frame.to_frame_coords(atom.position),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResidueFrames {
    pub frames: Vec<ResidueFrame>,
    /// Residues lacking an anchor or with collinear anchors.
    pub skipped: usize,
}

/// One frame per residue with CA, N and C (first occurrence of each),
/// built as `frame_from_triple(CA, N, C)`, in residue order.
pub fn residue_frames(atoms: &[AtomRecord]) -> ResidueFrames {
    let mut order: Vec<u32> = Vec::new();
    let mut anchors: HashMap<u32, [Option<&AtomRecord>; 3]> = HashMap::new();
    for a in atoms {
        let slot = anchors.entry(a.residue_ordinal).or_insert_with(|| {
            order.push(a.residue_ordinal);
            [None; 3]
        });
        let k = match a.atom_name.as_str() {
            "CA" => 0,
            "N" => 1,
            "C" => 2,
            _ => continue,
        };
        slot[k].get_or_insert(a);
    }
    let mut out = ResidueFrames::default();
    for r in order {
        match anchors[&r] {
            [Some(ca), Some(n), Some(c)] => match frame_from_triple(ca.position, n.position, c.position) {
                Ok(frame) => out.frames.push(ResidueFrame {
                    residue_ordinal: r,
                    anchors: [ca.atom_ordinal, n.atom_ordinal, c.atom_ordinal],
                    frame,
                }),
                Err(_) => out.skipped += 1,
            },
            _ => out.skipped += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct PatchEntries {
    pub entries: Vec<(CellIndex, CellEntry)>,
    pub atom_count: usize,
    pub frame_count: usize,
    pub skipped_residues: usize,
    /// Largest frame-coordinate norm over all (frame, atom) pairs.
    pub max_radius: f64,
}

/// Emits one entry per (frame, atom) pair of `patch`.
pub fn insert_patch(patch: &Patch, structure_key: u32, params: &GridParams) -> Result<PatchEntries> {
    let frames = residue_frames(&patch.atoms);
    if frames.frames.is_empty() {
        return Err(Error::NoValidFrame {
            id: patch.patch_id.clone(),
        });
    }
    let mut out = PatchEntries {
        entries: Vec::with_capacity(frames.frames.len() * patch.atoms.len()),
        atom_count: patch.atoms.len(),
        frame_count: frames.frames.len(),
        skipped_residues: frames.skipped,
        max_radius: 0.0,
    };
    for rf in &frames.frames {
        let ref_id = RefId::new(structure_key, rf.residue_ordinal);
        for atom in &patch.atoms {
            let q = rf.coords(atom);
            out.max_radius = out.max_radius.max(q.norm());
            out.entries
                .push((cell_of(q, params)?, CellEntry::new(ref_id, atom.atom_ordinal)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMeta {
    pub structure_key: u32,
    pub patch_id: String,
    pub source_protein_id: String,
    /// n: all atoms of the patch.
    pub atom_count: u64,
    /// m: frames (complete residues).
    pub frame_count: u64,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Entries held in memory by the run sorter before spilling.
    pub memory_budget: usize,
    /// Scratch space for sort spills; defaults to the database directory.
    pub tmp_dir: Option<PathBuf>,
    pub execution: Execution,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            memory_budget: DEFAULT_MEMORY_BUDGET,
            tmp_dir: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct BuildReport {
    pub registered: usize,
    /// Patches left out, with the reason.
    pub excluded: Vec<(String, Error)>,
    pub skipped_residues: usize,
    pub new_entries: u64,
}

#[derive(Debug, Clone)]
pub struct PatchDatabase {
    dir: PathBuf,
    grid: DiskGrid,
    meta: Vec<PatchMeta>,
    mps: f64,
}

impl PatchDatabase {
    pub fn exists(dir: &Path) -> bool {
        dir.join(DB_PARAMS_FILE).exists()
    }

    /// Builds a new database in `dir` from `patches`.
    pub fn build(dir: &Path, patches: &[Patch], params: GridParams, opts: &BuildOptions) -> Result<(Self, BuildReport)> {
        params.validate()?;
        if patches.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_unique_ids(patches, &HashSet::new())?;
        if Self::exists(dir) || dir.join(MANIFEST_FILE).exists() {
            return Err(Error::InvalidParams(format!(
                "{} already holds a database",
                dir.display()
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let _lock = DirLock::acquire(dir)?;
        let grid = DiskGrid::create(dir, params)?;
        let mut db = PatchDatabase {
            dir: dir.to_path_buf(),
            grid,
            meta: Vec::new(),
            mps: 0.0,
        };
        let report = db.append(patches, opts)?;
        Ok((db, report))
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let grid = DiskGrid::open(dir)?;
        let (params, mps) = read_db_params(&dir.join(DB_PARAMS_FILE))?;
        grid.params().ensure_same(&params)?;
        let meta = read_patch_meta(&dir.join(PATCH_META_FILE))?;
        Ok(PatchDatabase {
            dir: dir.to_path_buf(),
            grid,
            meta,
            mps,
        })
    }

    /// Adds patches as a fresh sorted run. Structure keys continue after
    /// the existing ones; mps grows to cover the new patches.
    pub fn add_patches(&mut self, patches: &[Patch], opts: &BuildOptions) -> Result<BuildReport> {
        let existing: HashSet<&str> = self.meta.iter().map(|m| m.patch_id.as_str()).collect();
        check_unique_ids(patches, &existing)?;
        if patches.is_empty() {
            return Ok(BuildReport::default());
        }
        let _lock = DirLock::acquire(&self.dir)?;
        self.append(patches, opts)
    }

    /// Merges all grid runs into one.
    pub fn compact(&mut self) -> Result<()> {
        let _lock = DirLock::acquire(&self.dir)?;
        self.grid.merge_runs()
    }

    fn append(&mut self, patches: &[Patch], opts: &BuildOptions) -> Result<BuildReport> {
        let params = *self.grid.params();
        let tmp = opts.tmp_dir.clone().unwrap_or_else(|| self.dir.clone());
        let mut builder = self.grid.run_builder(opts.memory_budget, &tmp, opts.execution)?;
        let mut report = BuildReport::default();
        let mut new_meta = Vec::new();
        let mut mps = self.mps;
        let mut next_key = self.meta.len() as u32;

        for batch in patches.chunks(PATCH_BATCH) {
            let results = exec::map(opts.execution, batch, |p| insert_patch(p, 0, &params));
            for (patch, res) in batch.iter().zip(results) {
                match res {
                    Ok(pe) => {
                        let key = next_key;
                        next_key += 1;
                        for (cell, mut entry) in pe.entries {
                            entry.ref_id.structure_key = key;
                            builder.push(cell, entry)?;
                        }
                        mps = mps.max(pe.max_radius);
                        report.registered += 1;
                        report.skipped_residues += pe.skipped_residues;
                        report.new_entries += (pe.atom_count * pe.frame_count) as u64;
                        new_meta.push(PatchMeta {
                            structure_key: key,
                            patch_id: patch.patch_id.clone(),
                            source_protein_id: patch.source_protein_id.clone(),
                            atom_count: pe.atom_count as u64,
                            frame_count: pe.frame_count as u64,
                        });
                    }
                    Err(e @ (Error::NoValidFrame { .. } | Error::OutOfExtent { .. })) => {
                        report.excluded.push((patch.patch_id.clone(), e))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.grid.commit_run(builder)?;
        self.meta.extend(new_meta);
        self.mps = mps;
        self.write_sidecars()?;
        Ok(report)
    }

    fn write_sidecars(&self) -> Result<()> {
        fsutil::write_atomic(&self.dir.join(PATCH_META_FILE), |w| {
            writeln!(w, "structure_key\tpatch_id\tsource_protein_id\tn\tm")?;
            for m in &self.meta {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}",
                    m.structure_key, m.patch_id, m.source_protein_id, m.atom_count, m.frame_count
                )?;
            }
            Ok(())
        })?;
        let p = self.grid.params();
        fsutil::write_atomic(&self.dir.join(DB_PARAMS_FILE), |w| {
            writeln!(w, "key\tvalue")?;
            writeln!(w, "delta\t{}", p.delta)?;
            writeln!(w, "bits_per_axis\t{}", p.bits_per_axis)?;
            writeln!(w, "mps\t{}", self.mps)
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn grid(&self) -> &DiskGrid {
        &self.grid
    }

    pub fn params(&self) -> &GridParams {
        self.grid.params()
    }

    /// Largest frame-origin-to-atom distance over all patches and frames.
    pub fn mps(&self) -> f64 {
        self.mps
    }

    pub fn patch_meta(&self) -> &[PatchMeta] {
        &self.meta
    }

    pub fn meta(&self, structure_key: u32) -> Option<&PatchMeta> {
        self.meta.get(structure_key as usize)
    }

    /// Σ n·m over registered patches; equals the grid's stored entry count.
    pub fn expected_entries(&self) -> u64 {
        self.meta.iter().map(|m| m.atom_count * m.frame_count).sum()
    }
}

fn check_unique_ids(patches: &[Patch], existing: &HashSet<&str>) -> Result<()> {
    let mut seen: HashSet<&str> = HashSet::new();
    for p in patches {
        if existing.contains(p.patch_id.as_str()) || !seen.insert(&p.patch_id) {
            return Err(Error::DuplicatePatchId(p.patch_id.clone()));
        }
    }
    Ok(())
}

fn tsv_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.is_empty() {
            continue;
        }
        rows.push((i + 1, line.split('\t').map(String::from).collect()));
    }
    Ok(rows)
}

fn read_db_params(path: &Path) -> Result<(GridParams, f64)> {
    let mut kv = HashMap::new();
    for (_, row) in tsv_rows(path)? {
        if let [k, v] = row.as_slice() {
            kv.insert(k.clone(), v.clone());
        }
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::corrupt(path, format!("missing {k}")))
    };
    let bad = |k: &str| Error::corrupt(path, format!("bad {k}"));
    let params = GridParams::new(
        get("delta")?.parse().map_err(|_| bad("delta"))?,
        get("bits_per_axis")?.parse().map_err(|_| bad("bits_per_axis"))?,
    )?;
    let mps: f64 = get("mps")?.parse().map_err(|_| bad("mps"))?;
    Ok((params, mps))
}

fn read_patch_meta(path: &Path) -> Result<Vec<PatchMeta>> {
    let mut out = Vec::new();
    for (line, row) in tsv_rows(path)? {
        let bad = || Error::corrupt(path, format!("bad row at line {line}"));
        let [key, id, src, n, m] = row.as_slice() else {
            return Err(bad());
        };
        let meta = PatchMeta {
            structure_key: key.parse().map_err(|_| bad())?,
            patch_id: id.clone(),
            source_protein_id: src.clone(),
            atom_count: n.parse().map_err(|_| bad())?,
            frame_count: m.parse().map_err(|_| bad())?,
        };
        if meta.structure_key as usize != out.len() {
            return Err(Error::corrupt(path, "structure keys are not dense"));
        }
        out.push(meta);
    }
    Ok(out)
}
