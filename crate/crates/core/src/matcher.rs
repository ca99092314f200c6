//! Query-side matching: build the query grid clipped to the database's
//! maximum patch radius, merge-scan it against the database grid in
//! z-order, aggregate per (database frame, query frame) pair, normalize by
//! patch size and threshold.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::extsort::{ChunkReader, FixedRecord};
use crate::grid::{cell_of, Cell, CellEntry, DiskGrid, GridParams, RefId};
use crate::ingest::{Patch, PatchOrigin, Protein};
use crate::preprocess::{residue_frames, BuildOptions, PatchDatabase, PatchMeta};

pub const DEFAULT_SCORE_BUDGET: usize = 1_000_000;
const SCORE_PARTITIONS: usize = 16;
/// Structure key used for the query's own frames.
pub const QUERY_STRUCTURE_KEY: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ScoreRecord {
    db: RefId,
    query: RefId,
    count: u64,
}

impl FixedRecord for ScoreRecord {
    const SIZE: usize = 24;

    fn encode(&self, out: &mut [u8]) {
        out[0..4].copy_from_slice(&self.db.structure_key.to_le_bytes());
        out[4..8].copy_from_slice(&self.db.residue_ordinal.to_le_bytes());
        out[8..12].copy_from_slice(&self.query.structure_key.to_le_bytes());
        out[12..16].copy_from_slice(&self.query.residue_ordinal.to_le_bytes());
        out[16..24].copy_from_slice(&self.count.to_le_bytes());
    }

    fn decode(b: &[u8]) -> Self {
        let u = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        ScoreRecord {
            db: RefId::new(u(0), u(4)),
            query: RefId::new(u(8), u(12)),
            count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        }
    }
}

/// Matched-atom counts per (database frame, query frame). Holds up to
/// `budget` live pairs in memory; beyond that, pairs are spilled into
/// sorted partition files keyed by database frame and summed back together
/// in [`ScoreTable::into_counts`].
pub struct ScoreTable {
    budget: usize,
    live: HashMap<(RefId, RefId), u64>,
    tmp_root: PathBuf,
    tmp: Option<TempDir>,
    partitions: Vec<Vec<PathBuf>>,
    spills: usize,
}

fn partition_of(db: RefId) -> usize {
    let h = (db.structure_key as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(db.residue_ordinal as u64)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    (h >> 32) as usize % SCORE_PARTITIONS
}

impl ScoreTable {
    pub fn new(budget: usize, tmp_root: &Path) -> Self {
        ScoreTable {
            budget: budget.max(1),
            live: HashMap::new(),
            tmp_root: tmp_root.to_path_buf(),
            tmp: None,
            partitions: vec![Vec::new(); SCORE_PARTITIONS],
            spills: 0,
        }
    }

    pub fn add(&mut self, db: RefId, query: RefId, count: u64) -> Result<()> {
        *self.live.entry((db, query)).or_insert(0) += count;
        if self.live.len() >= self.budget {
            self.spill()?;
        }
        Ok(())
    }

    /// Number of times the in-memory map was flushed to disk.
    pub fn spills(&self) -> usize {
        self.spills
    }

    pub fn live_pairs(&self) -> usize {
        self.live.len()
    }

    fn spill(&mut self) -> Result<()> {
        if self.live.is_empty() {
            return Ok(());
        }
        if self.tmp.is_none() {
            std::fs::create_dir_all(&self.tmp_root).map_err(|e| Error::io(&self.tmp_root, e))?;
            self.tmp = Some(
                tempfile::Builder::new()
                    .prefix("scores-")
                    .tempdir_in(&self.tmp_root)
                    .map_err(|e| Error::io(&self.tmp_root, e))?,
            );
        }
        let dir = self.tmp.as_ref().expect("spill dir").path().to_path_buf();
        let mut parts: Vec<Vec<ScoreRecord>> = vec![Vec::new(); SCORE_PARTITIONS];
        for ((db, query), count) in self.live.drain() {
            parts[partition_of(db)].push(ScoreRecord { db, query, count });
        }
        let mut buf = [0u8; ScoreRecord::SIZE];
        for (p, mut recs) in parts.into_iter().enumerate() {
            if recs.is_empty() {
                continue;
            }
            recs.sort_unstable();
            let path = dir.join(format!("p{p:02}-{:06}.bin", self.spills));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            for r in &recs {
                r.encode(&mut buf);
                w.write_all(&buf).map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            self.partitions[p].push(path);
        }
        self.spills += 1;
        Ok(())
    }

    /// All pairs with their summed counts, ordered by (db, query).
    pub fn into_counts(mut self) -> Result<Vec<((RefId, RefId), u64)>> {
        let mut live_parts: Vec<Vec<ScoreRecord>> = vec![Vec::new(); SCORE_PARTITIONS];
        for ((db, query), count) in self.live.drain() {
            live_parts[partition_of(db)].push(ScoreRecord { db, query, count });
        }
        let mut out: Vec<((RefId, RefId), u64)> = Vec::new();
        for (p, mut mem) in live_parts.into_iter().enumerate() {
            mem.sort_unstable();
            let mut readers = Vec::new();
            for path in &self.partitions[p] {
                readers.push(ChunkReader::<ScoreRecord>::open(path)?);
            }
            // sources 0..readers.len() are files, the last is the in-memory tail
            let mut mem_iter = mem.into_iter();
            let mem_src = readers.len();
            let mut heap = BinaryHeap::new();
            for (i, r) in readers.iter_mut().enumerate() {
                if let Some(rec) = r.next_record()? {
                    heap.push(Reverse((rec, i)));
                }
            }
            if let Some(rec) = mem_iter.next() {
                heap.push(Reverse((rec, mem_src)));
            }
            let mut current: Option<((RefId, RefId), u64)> = None;
            while let Some(Reverse((rec, src))) = heap.pop() {
                let next = if src == mem_src {
                    mem_iter.next()
                } else {
                    readers[src].next_record()?
                };
                if let Some(n) = next {
                    heap.push(Reverse((n, src)));
                }
                match &mut current {
                    Some((key, c)) if *key == (rec.db, rec.query) => *c += rec.count,
                    _ => {
                        out.extend(current.take());
                        current = Some(((rec.db, rec.query), rec.count));
                    }
                }
            }
            out.extend(current);
        }
        out.sort_unstable_by_key(|(k, _)| *k);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub db_ref_id: RefId,
    pub query_ref_id: RefId,
    pub score: f64,
    pub matched_count: u64,
    pub patch_id: String,
    pub source_protein_id: String,
}

/// Score descending, then patch id, query frame and database frame.
pub fn result_order(a: &MatchResult, b: &MatchResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.patch_id.cmp(&b.patch_id))
        .then_with(|| a.query_ref_id.cmp(&b.query_ref_id))
        .then_with(|| a.db_ref_id.cmp(&b.db_ref_id))
}

#[derive(Debug, Clone)]
pub struct MatchOptions {
    /// Entries held in memory while sorting the query grid.
    pub memory_budget: usize,
    /// Live (db, query) pairs held in memory by the score table.
    pub score_budget: usize,
    pub tmp_dir: Option<PathBuf>,
    pub execution: Execution,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            memory_budget: crate::preprocess::DEFAULT_MEMORY_BUDGET,
            score_budget: DEFAULT_SCORE_BUDGET,
            tmp_dir: None,
            execution: Execution::default(),
        }
    }
}

impl MatchOptions {
    fn tmp_root(&self) -> PathBuf {
        self.tmp_dir.clone().unwrap_or_else(std::env::temp_dir)
    }
}

#[derive(Debug, Clone)]
pub struct QueryGrid {
    pub grid: DiskGrid,
    pub frames: usize,
    pub skipped_residues: usize,
    /// (frame, atom) pairs beyond the clipping radius.
    pub clipped: u64,
    /// (frame, atom) pairs that fell outside the grid extent.
    pub dropped_out_of_extent: u64,
}

/// Builds the z-sorted query grid in `dir`: one frame per complete residue
/// and, per frame, only atoms within `mps` of the frame origin.
pub fn build_query_grid(query: &Protein, params: &GridParams, mps: f64, dir: &Path, opts: &MatchOptions) -> Result<QueryGrid> {
    let frames = residue_frames(&query.atoms);
    if frames.frames.is_empty() {
        return Err(Error::NoValidFrame {
            id: query.protein_id.clone(),
        });
    }
    let per_frame = exec::map(opts.execution, &frames.frames, |rf| {
        let ref_id = RefId::new(QUERY_STRUCTURE_KEY, rf.residue_ordinal);
        let (mut clipped, mut dropped) = (0u64, 0u64);
        let mut entries = Vec::new();
        for atom in &query.atoms {
            let q = rf.coords(atom);
            let r = q.norm();
            if r.is_nan() || r > mps {
                clipped += 1;
                continue;
            }
            match cell_of(q, params) {
                Ok(c) => entries.push((c, CellEntry::new(ref_id, atom.atom_ordinal))),
                Err(_) => dropped += 1,
            }
        }
        (entries, clipped, dropped)
    });
    let mut grid = DiskGrid::create(dir, *params)?;
    let tmp = opts.tmp_root();
    let mut builder = grid.run_builder(opts.memory_budget, &tmp, opts.execution)?;
    let (mut clipped, mut dropped) = (0, 0);
    for (entries, c, d) in per_frame {
        clipped += c;
        dropped += d;
        for (cell, e) in entries {
            builder.push(cell, e)?;
        }
    }
    grid.commit_run(builder)?;
    Ok(QueryGrid {
        grid,
        frames: frames.frames.len(),
        skipped_residues: frames.skipped,
        clipped,
        dropped_out_of_extent: dropped,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub gp_cell_reads: u64,
    pub gq_cell_reads: u64,
    pub shared_cells: u64,
}

/// Adds, for every cell present in both grids, the number of `gp` entries
/// of each database frame to every query frame present in the `gq` cell.
pub fn merge_scan_match(gp: &DiskGrid, gq: &DiskGrid, table: &mut ScoreTable) -> Result<ScanStats> {
    gp.params().ensure_same(gq.params())?;
    let mut pc = gp.scan()?;
    let mut qc = gq.scan()?;
    let mut p = pc.next().transpose()?;
    let mut q = qc.next().transpose()?;
    let mut shared = 0;
    loop {
        match (&p, &q) {
            (Some(pcell), Some(qcell)) => match pcell.z.cmp(&qcell.z) {
                Ordering::Less => p = pc.next().transpose()?,
                Ordering::Greater => q = qc.next().transpose()?,
                Ordering::Equal => {
                    shared += 1;
                    join_cell(pcell, qcell, table)?;
                    p = pc.next().transpose()?;
                    q = qc.next().transpose()?;
                }
            },
            // drain the remainder so every stored cell is read exactly once
            (Some(_), None) => p = pc.next().transpose()?,
            (None, Some(_)) => q = qc.next().transpose()?,
            (None, None) => break,
        }
    }
    Ok(ScanStats {
        gp_cell_reads: pc.physical_reads(),
        gq_cell_reads: qc.physical_reads(),
        shared_cells: shared,
    })
}

fn join_cell(pcell: &Cell, qcell: &Cell, table: &mut ScoreTable) -> Result<()> {
    let mut query_refs: Vec<RefId> = qcell.entries.iter().map(|e| e.ref_id).collect();
    query_refs.dedup();
    for group in pcell.entries.chunk_by(|a, b| a.ref_id == b.ref_id) {
        let db = group[0].ref_id;
        for &q in &query_refs {
            table.add(db, q, group.len() as u64)?;
        }
    }
    Ok(())
}

/// Divides each matched count by the atom count of its patch.
pub fn finalize_scores(table: ScoreTable, meta: &[PatchMeta]) -> Result<Vec<MatchResult>> {
    let mut out = Vec::new();
    for ((db, query), count) in table.into_counts()? {
        if count == 0 {
            continue;
        }
        let m = meta
            .get(db.structure_key as usize)
            .ok_or(Error::UnknownRefId(db.structure_key))?;
        if count > m.atom_count {
            return Err(Error::ScoreOverflow {
                patch_id: m.patch_id.clone(),
                count,
                atoms: m.atom_count,
            });
        }
        out.push(MatchResult {
            db_ref_id: db,
            query_ref_id: query,
            score: count as f64 / m.atom_count as f64,
            matched_count: count,
            patch_id: m.patch_id.clone(),
            source_protein_id: m.source_protein_id.clone(),
        });
    }
    out.sort_by(result_order);
    Ok(out)
}

/// Keeps results with `score >= tau_pp`.
pub fn threshold_filter(results: Vec<MatchResult>, tau_pp: f64) -> Vec<MatchResult> {
    results.into_iter().filter(|r| r.score >= tau_pp).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub query_frames: usize,
    pub skipped_residues: usize,
    pub query_entries: u64,
    pub clipped: u64,
    pub dropped_out_of_extent: u64,
    pub gp_stored_cells: u64,
    pub gq_stored_cells: u64,
    pub gp_cell_reads: u64,
    pub gq_cell_reads: u64,
    pub shared_cells: u64,
    pub score_spills: usize,
    pub scored_pairs: usize,
    pub results: usize,
}

impl MatchStats {
    pub fn write_kv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let rows: [(&str, u64); 13] = [
            ("query_frames", self.query_frames as u64),
            ("skipped_residues", self.skipped_residues as u64),
            ("query_entries", self.query_entries),
            ("clipped", self.clipped),
            ("dropped_out_of_extent", self.dropped_out_of_extent),
            ("gp_stored_cells", self.gp_stored_cells),
            ("gq_stored_cells", self.gq_stored_cells),
            ("gp_cell_reads", self.gp_cell_reads),
            ("gq_cell_reads", self.gq_cell_reads),
            ("shared_cells", self.shared_cells),
            ("score_spills", self.score_spills as u64),
            ("scored_pairs", self.scored_pairs as u64),
            ("results", self.results as u64),
        ];
        for (k, v) in rows {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub results: Vec<MatchResult>,
    pub stats: MatchStats,
}

/// Query grid → merge scan → normalization → threshold.
pub fn match_query(query: &Protein, db: &PatchDatabase, tau_pp: f64, opts: &MatchOptions) -> Result<MatchOutcome> {
    match_query_with_mps(query, db, db.mps(), tau_pp, opts)
}

fn match_query_with_mps(query: &Protein, db: &PatchDatabase, mps: f64, tau_pp: f64, opts: &MatchOptions) -> Result<MatchOutcome> {
    let root = opts.tmp_root();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let work = tempfile::Builder::new()
        .prefix("query-")
        .tempdir_in(&root)
        .map_err(|e| Error::io(&root, e))?;
    let qg = build_query_grid(query, db.params(), mps, &work.path().join("gq"), opts)?;
    let mut table = ScoreTable::new(opts.score_budget, work.path());
    let scan = merge_scan_match(db.grid(), &qg.grid, &mut table)?;
    let spills = table.spills();
    let all = finalize_scores(table, db.patch_meta())?;
    let scored_pairs = all.len();
    let results = threshold_filter(all, tau_pp);
    let stats = MatchStats {
        query_frames: qg.frames,
        skipped_residues: qg.skipped_residues,
        query_entries: qg.grid.total_entries(),
        clipped: qg.clipped,
        dropped_out_of_extent: qg.dropped_out_of_extent,
        gp_stored_cells: db.grid().stored_cells(),
        gq_stored_cells: qg.grid.stored_cells(),
        gp_cell_reads: scan.gp_cell_reads,
        gq_cell_reads: scan.gq_cell_reads,
        shared_cells: scan.shared_cells,
        score_spills: spills,
        scored_pairs,
        results: results.len(),
    };
    Ok(MatchOutcome { results, stats })
}

/// Protein-level similarity: `b` is indexed as a single unclipped patch,
/// `a` is matched against it, and the best frame-pair score is returned.
pub fn structural_identity(a: &Protein, b: &Protein, params: &GridParams, opts: &MatchOptions) -> Result<f64> {
    let root = opts.tmp_root();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let work = tempfile::Builder::new()
        .prefix("identity-")
        .tempdir_in(&root)
        .map_err(|e| Error::io(&root, e))?;
    let patch = Patch::from_protein(b, PatchOrigin::SiteRecord);
    let build = BuildOptions {
        memory_budget: opts.memory_budget,
        tmp_dir: Some(work.path().to_path_buf()),
        execution: opts.execution,
    };
    let (db, report) = PatchDatabase::build(&work.path().join("db"), &[patch], *params, &build)?;
    if let Some((_, e)) = report.excluded.into_iter().next() {
        return Err(e);
    }
    let inner = MatchOptions {
        tmp_dir: Some(work.path().to_path_buf()),
        ..opts.clone()
    };
    let out = match_query_with_mps(a, &db, f64::INFINITY, 0.0, &inner)?;
    Ok(out.results.iter().map(|r| r.score).fold(0.0, f64::max))
}

pub const RESULT_HEADER: &str = "patch_id\tsource_protein_id\tdb_residue_ordinal\tquery_residue_ordinal\tscore";

/// Result rows as TSV, preceded by a `# query_id=` comment and a header.
pub fn write_results_tsv(w: &mut dyn Write, query_id: &str, results: &[MatchResult]) -> std::io::Result<()> {
    writeln!(w, "# query_id={query_id}")?;
    writeln!(w, "{RESULT_HEADER}")?;
    for r in results {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.patch_id, r.source_protein_id, r.db_ref_id.residue_ordinal, r.query_ref_id.residue_ordinal, r.score
        )?;
    }
    Ok(())
}

/// One row of a result file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub patch_id: String,
    pub source_protein_id: String,
    pub db_residue_ordinal: u32,
    pub query_residue_ordinal: u32,
    pub score: f64,
}

/// Reads a result file; returns the query id from the comment line, if any.
pub fn read_results_tsv<R: BufRead>(reader: R) -> Result<(Option<String>, Vec<ResultRow>)> {
    let mut query_id = None;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<results>", e))?;
        let bad = |why: &str| Error::MalformedRecord {
            line: i + 1,
            reason: why.to_string(),
        };
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(id) = rest.trim().strip_prefix("query_id=") {
                query_id = Some(id.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() || line == RESULT_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [pid, src, dr, qr, s] = f.as_slice() else {
            return Err(bad("expected 5 tab-separated fields"));
        };
        let score: f64 = s.parse().map_err(|_| bad("bad score"))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad("score outside [0, 1]"));
        }
        rows.push(ResultRow {
            patch_id: pid.to_string(),
            source_protein_id: src.to_string(),
            db_residue_ordinal: dr.parse().map_err(|_| bad("bad db residue ordinal"))?,
            query_residue_ordinal: qr.parse().map_err(|_| bad("bad query residue ordinal"))?,
            score,
        });
    }
    Ok((query_id, rows))
}
