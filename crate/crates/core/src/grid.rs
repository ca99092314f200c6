//! The disk-resident grid: cell quantization, Morton (z-value) codes,
//! sorted runs of cells, merging cursors and run compaction.
//!
//! A grid directory holds a text manifest plus one binary file per sorted
//! run. Run files start with the 8-byte magic `PGRUN\0\0\x01`, followed by
//! one record per non-empty cell, in strictly increasing z:
//!
//! ```text
//! z            u64 little-endian
//! entry_count  u32 little-endian
//! entries      entry_count × { structure_key u32, residue_ordinal u32, atom_ordinal u32 } (LE)
//! ```
//!
//! Entries inside a cell are sorted by `(ref_id, atom_ordinal)` and unique.
//! The manifest (`MANIFEST`) is line oriented:
//!
//! ```text
//! patchgrid-manifest 1
//! delta <f64>
//! bits_per_axis <u32>
//! next_run <u64>
//! run <file name> <cell count> <entry count>
//! ```

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::extsort::{ExternalSorter, FixedRecord};
use crate::fsutil;
use crate::geometry::Point3;

pub const RUN_MAGIC: [u8; 8] = *b"PGRUN\0\0\x01";
pub const MANIFEST_FILE: &str = "MANIFEST";
pub const DEFAULT_BITS_PER_AXIS: u32 = 21;
pub const ENTRY_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    /// Cell edge length in Å.
    pub delta: f64,
    pub bits_per_axis: u32,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            delta: 1.0,
            bits_per_axis: DEFAULT_BITS_PER_AXIS,
        }
    }
}

impl GridParams {
    pub fn new(delta: f64, bits_per_axis: u32) -> Result<Self> {
        let p = GridParams {
            delta,
            bits_per_axis,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidParams(format!(
                "delta must be positive and finite, got {}",
                self.delta
            )));
        }
        if !(1..=21).contains(&self.bits_per_axis) {
            return Err(Error::InvalidParams(format!(
                "bits_per_axis must be in 1..=21, got {}",
                self.bits_per_axis
            )));
        }
        Ok(())
    }

    pub fn half_extent_cells(&self) -> i64 {
        1i64 << (self.bits_per_axis - 1)
    }

    pub fn ensure_same(&self, other: &GridParams) -> Result<()> {
        if self.delta.to_bits() != other.delta.to_bits() || self.bits_per_axis != other.bits_per_axis
        {
            return Err(Error::ParamsMismatch(format!(
                "delta {} / bits {} vs delta {} / bits {}",
                self.delta, self.bits_per_axis, other.delta, other.bits_per_axis
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl CellIndex {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        CellIndex { ix, iy, iz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ZValue(pub u64);

/// Identifies one reference frame: the residue `residue_ordinal` of the
/// structure registered under `structure_key`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RefId {
    pub structure_key: u32,
    pub residue_ordinal: u32,
}

impl RefId {
    pub const fn new(structure_key: u32, residue_ordinal: u32) -> Self {
        RefId {
            structure_key,
            residue_ordinal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellEntry {
    pub ref_id: RefId,
    pub atom_ordinal: u32,
}

impl CellEntry {
    pub const fn new(ref_id: RefId, atom_ordinal: u32) -> Self {
        CellEntry {
            ref_id,
            atom_ordinal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub z: ZValue,
    pub entries: Vec<CellEntry>,
}

pub fn cell_of(p: Point3, params: &GridParams) -> Result<CellIndex> {
    let half = params.half_extent_cells() as f64;
    let q = [p.x, p.y, p.z].map(|v| (v / params.delta).floor());
    if q.iter().any(|v| !(*v >= -half && *v <= half - 1.0)) {
        return Err(Error::OutOfExtent {
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    Ok(CellIndex::new(q[0] as i32, q[1] as i32, q[2] as i32))
}

/// Spreads the low 21 bits of `v` so that bit i lands at position 3i.
#[inline]
fn spread3(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact3(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Interleaves non-negative per-axis indices: x bit i → 3i, y → 3i+1,
/// z → 3i+2.
#[inline]
pub fn interleave(x: u32, y: u32, z: u32) -> u64 {
    spread3(x) | (spread3(y) << 1) | (spread3(z) << 2)
}

#[inline]
pub fn deinterleave(code: u64) -> (u32, u32, u32) {
    (compact3(code), compact3(code >> 1), compact3(code >> 2))
}

/// Offsets each signed component by the half extent, then interleaves.
pub fn morton_encode(c: CellIndex, params: &GridParams) -> ZValue {
    let half = params.half_extent_cells();
    let off = |v: i32| {
        let o = v as i64 + half;
        debug_assert!(o >= 0 && o < 2 * half, "cell index outside extent");
        o as u32
    };
    ZValue(interleave(off(c.ix), off(c.iy), off(c.iz)))
}

pub fn morton_decode(z: ZValue, params: &GridParams) -> CellIndex {
    let half = params.half_extent_cells();
    let (x, y, w) = deinterleave(z.0);
    let un = |v: u32| (v as i64 - half) as i32;
    CellIndex::new(un(x), un(y), un(w))
}

/// Sort key of one entry during run construction: (z, ref_id, atom).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct GridRecord {
    z: u64,
    entry: CellEntry,
}

impl FixedRecord for GridRecord {
    const SIZE: usize = 8 + ENTRY_BYTES;

    fn encode(&self, out: &mut [u8]) {
        out[0..8].copy_from_slice(&self.z.to_le_bytes());
        encode_entry(&self.entry, &mut out[8..20]);
    }

    fn decode(buf: &[u8]) -> Self {
        GridRecord {
            z: u64::from_le_bytes(buf[0..8].try_into().unwrap()),
            entry: decode_entry(&buf[8..20]),
        }
    }
}

fn encode_entry(e: &CellEntry, out: &mut [u8]) {
    out[0..4].copy_from_slice(&e.ref_id.structure_key.to_le_bytes());
    out[4..8].copy_from_slice(&e.ref_id.residue_ordinal.to_le_bytes());
    out[8..12].copy_from_slice(&e.atom_ordinal.to_le_bytes());
}

fn decode_entry(b: &[u8]) -> CellEntry {
    let u = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    CellEntry::new(RefId::new(u(0), u(4)), u(8))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub file: String,
    pub cells: u64,
    pub entries: u64,
}

pub struct RunWriter {
    path: PathBuf,
    w: BufWriter<File>,
    cells: u64,
    entries: u64,
    last_z: Option<u64>,
    scratch: Vec<u8>,
}

impl RunWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::with_capacity(1 << 16, file);
        w.write_all(&RUN_MAGIC).map_err(|e| Error::io(path, e))?;
        Ok(RunWriter {
            path: path.to_path_buf(),
            w,
            cells: 0,
            entries: 0,
            last_z: None,
            scratch: Vec::new(),
        })
    }

    /// Appends a cell. Cells must arrive in strictly increasing z with
    /// sorted, unique, non-empty entry lists.
    pub fn write_cell(&mut self, cell: &Cell) -> Result<()> {
        if cell.entries.is_empty() {
            return Ok(());
        }
        if self.last_z.is_some_and(|z| z >= cell.z.0) {
            return Err(Error::corrupt(&self.path, "cells written out of z order"));
        }
        debug_assert!(cell.entries.windows(2).all(|w| w[0] < w[1]));
        self.scratch.clear();
        self.scratch.extend_from_slice(&cell.z.0.to_le_bytes());
        self.scratch
            .extend_from_slice(&(cell.entries.len() as u32).to_le_bytes());
        let mut buf = [0u8; ENTRY_BYTES];
        for e in &cell.entries {
            encode_entry(e, &mut buf);
            self.scratch.extend_from_slice(&buf);
        }
        self.w
            .write_all(&self.scratch)
            .map_err(|e| Error::io(&self.path, e))?;
        self.cells += 1;
        self.entries += cell.entries.len() as u64;
        self.last_z = Some(cell.z.0);
        Ok(())
    }

    pub fn finish(self) -> Result<RunMeta> {
        let path = self.path;
        let file = self
            .w
            .into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&path, e))?;
        Ok(RunMeta {
            file: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            cells: self.cells,
            entries: self.entries,
        })
    }
}

pub struct RunReader {
    path: PathBuf,
    r: BufReader<File>,
    cells_read: u64,
    last_z: Option<u64>,
}

impl RunReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::with_capacity(1 << 16, file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::corrupt(path, "missing run header"))?;
        if magic != RUN_MAGIC {
            return Err(Error::corrupt(path, "bad run magic"));
        }
        Ok(RunReader {
            path: path.to_path_buf(),
            r,
            cells_read: 0,
            last_z: None,
        })
    }

    pub fn cells_read(&self) -> u64 {
        self.cells_read
    }

    pub fn next_cell(&mut self) -> Result<Option<Cell>> {
        let mut head = [0u8; 12];
        let mut got = 0;
        while got < head.len() {
            match self.r.read(&mut head[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(Error::corrupt(&self.path, "truncated cell header")),
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(&self.path, e)),
            }
        }
        let z = u64::from_le_bytes(head[0..8].try_into().unwrap());
        let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        if n == 0 {
            return Err(Error::corrupt(&self.path, "empty cell stored"));
        }
        if self.last_z.is_some_and(|prev| prev >= z) {
            return Err(Error::corrupt(&self.path, "z values not strictly increasing"));
        }
        let mut body = vec![0u8; n * ENTRY_BYTES];
        self.r
            .read_exact(&mut body)
            .map_err(|_| Error::corrupt(&self.path, "truncated cell body"))?;
        let entries = body.chunks_exact(ENTRY_BYTES).map(decode_entry).collect();
        self.cells_read += 1;
        self.last_z = Some(z);
        Ok(Some(Cell {
            z: ZValue(z),
            entries,
        }))
    }
}

/// Streams (cell, entry) pairs through a bounded-memory external sort and
/// writes them as one sorted run.
pub struct RunBuilder {
    params: GridParams,
    sorter: ExternalSorter<GridRecord>,
}

impl RunBuilder {
    pub fn new(params: GridParams, budget: usize, tmp: &Path, exec: Execution) -> Result<Self> {
        params.validate()?;
        Ok(RunBuilder {
            params,
            sorter: ExternalSorter::new(budget, tmp, exec)?,
        })
    }

    pub fn push(&mut self, cell: CellIndex, entry: CellEntry) -> Result<()> {
        let z = morton_encode(cell, &self.params).0;
        self.sorter.push(GridRecord { z, entry })
    }

    pub fn spilled_chunks(&self) -> usize {
        self.sorter.spilled_chunks()
    }

    /// Writes the run; identical (z, ref_id, atom) triples collapse to one.
    pub fn finish(self, path: &Path) -> Result<RunMeta> {
        let mut out = RunWriter::create(path)?;
        let mut current: Option<Cell> = None;
        let mut last: Option<GridRecord> = None;
        for rec in self.sorter.finish()? {
            let rec = rec?;
            if last == Some(rec) {
                continue;
            }
            last = Some(rec);
            match &mut current {
                Some(cell) if cell.z.0 == rec.z => cell.entries.push(rec.entry),
                _ => {
                    if let Some(done) = current.take() {
                        out.write_cell(&done)?;
                    }
                    current = Some(Cell {
                        z: ZValue(rec.z),
                        entries: vec![rec.entry],
                    });
                }
            }
        }
        if let Some(done) = current {
            out.write_cell(&done)?;
        }
        out.finish()
    }
}

/// External sort of `entries` by (z, ref_id, atom) into the run file at
/// `path`, holding at most `budget` entries in memory.
pub fn build_sorted_run<I>(
    entries: I,
    params: &GridParams,
    path: &Path,
    budget: usize,
    tmp: &Path,
    exec: Execution,
) -> Result<RunMeta>
where
    I: IntoIterator<Item = (CellIndex, CellEntry)>,
{
    let mut b = RunBuilder::new(*params, budget, tmp, exec)?;
    for (c, e) in entries {
        b.push(c, e)?;
    }
    b.finish(path)
}

/// A grid directory: parameters plus an ordered list of sorted runs.
#[derive(Debug, Clone)]
pub struct DiskGrid {
    dir: PathBuf,
    params: GridParams,
    runs: Vec<RunMeta>,
    next_run: u64,
}

impl DiskGrid {
    /// Creates an empty grid in `dir` (created if missing).
    pub fn create(dir: &Path, params: GridParams) -> Result<Self> {
        params.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let g = DiskGrid {
            dir: dir.to_path_buf(),
            params,
            runs: Vec::new(),
            next_run: 0,
        };
        g.write_manifest()?;
        Ok(g)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |why: &str| Error::corrupt(&path, why.to_string());
        let mut delta = None;
        let mut bits = None;
        let mut next_run = None;
        let mut runs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["patchgrid-manifest", "1"] if i == 0 => {}
                ["delta", v] => delta = Some(v.parse::<f64>().map_err(|_| bad("bad delta"))?),
                ["bits_per_axis", v] => {
                    bits = Some(v.parse::<u32>().map_err(|_| bad("bad bits_per_axis"))?)
                }
                ["next_run", v] => {
                    next_run = Some(v.parse::<u64>().map_err(|_| bad("bad next_run"))?)
                }
                ["run", file, cells, entries] => runs.push(RunMeta {
                    file: file.to_string(),
                    cells: cells.parse().map_err(|_| bad("bad run cell count"))?,
                    entries: entries.parse().map_err(|_| bad("bad run entry count"))?,
                }),
                _ if i == 0 => return Err(bad("missing manifest header")),
                _ => return Err(bad(&format!("unrecognized line {}", i + 1))),
            }
        }
        let params = GridParams {
            delta: delta.ok_or_else(|| bad("missing delta"))?,
            bits_per_axis: bits.ok_or_else(|| bad("missing bits_per_axis"))?,
        };
        params.validate()?;
        Ok(DiskGrid {
            dir: dir.to_path_buf(),
            params,
            runs,
            next_run: next_run.ok_or_else(|| bad("missing next_run"))?,
        })
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        fsutil::write_atomic(&path, |w| {
            writeln!(w, "patchgrid-manifest 1")?;
            writeln!(w, "delta {}", self.params.delta)?;
            writeln!(w, "bits_per_axis {}", self.params.bits_per_axis)?;
            writeln!(w, "next_run {}", self.next_run)?;
            for r in &self.runs {
                writeln!(w, "run {} {} {}", r.file, r.cells, r.entries)?;
            }
            Ok(())
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn runs(&self) -> &[RunMeta] {
        &self.runs
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Stored cells summed over runs; a cell present in two runs counts twice.
    pub fn stored_cells(&self) -> u64 {
        self.runs.iter().map(|r| r.cells).sum()
    }

    pub fn total_entries(&self) -> u64 {
        self.runs.iter().map(|r| r.entries).sum()
    }

    fn next_run_path(&self) -> (String, PathBuf) {
        let name = format!("run-{:06}.bin", self.next_run);
        let path = self.dir.join(&name);
        (name, path)
    }

    /// Sorts `entries` into a new run and records it in the manifest.
    /// An empty stream leaves the grid unchanged.
    pub fn append_run<I>(&mut self, entries: I, budget: usize, tmp: &Path, exec: Execution) -> Result<RunMeta>
    where
        I: IntoIterator<Item = (CellIndex, CellEntry)>,
    {
        let mut b = self.run_builder(budget, tmp, exec)?;
        for (c, e) in entries {
            b.push(c, e)?;
        }
        self.commit_run(b)
    }

    pub fn run_builder(&self, budget: usize, tmp: &Path, exec: Execution) -> Result<RunBuilder> {
        RunBuilder::new(self.params, budget, tmp, exec)
    }

    pub fn commit_run(&mut self, builder: RunBuilder) -> Result<RunMeta> {
        let (_, path) = self.next_run_path();
        let meta = builder.finish(&path)?;
        if meta.cells == 0 {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            return Ok(meta);
        }
        self.runs.push(meta.clone());
        self.next_run += 1;
        self.write_manifest()?;
        Ok(meta)
    }

    /// Compacts all runs into one. Equal-z cells from different runs are
    /// merged; superseded run files are removed after the manifest switch.
    pub fn merge_runs(&mut self) -> Result<()> {
        if self.runs.len() <= 1 {
            return Ok(());
        }
        let (_, path) = self.next_run_path();
        let mut out = RunWriter::create(&path)?;
        let mut cursor = self.scan()?;
        for cell in &mut cursor {
            out.write_cell(&cell?)?;
        }
        let meta = out.finish()?;
        let old = std::mem::replace(&mut self.runs, vec![meta]);
        self.next_run += 1;
        self.write_manifest()?;
        for r in old {
            let p = self.dir.join(&r.file);
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn scan(&self) -> Result<GridCursor> {
        let mut readers = Vec::with_capacity(self.runs.len());
        for r in &self.runs {
            readers.push(RunReader::open(&self.dir.join(&r.file))?);
        }
        GridCursor::new(readers)
    }

    /// Reads every run and checks ordering plus the manifest counts.
    pub fn verify(&self) -> Result<()> {
        for r in &self.runs {
            let path = self.dir.join(&r.file);
            let mut rd = RunReader::open(&path)?;
            let (mut cells, mut entries) = (0u64, 0u64);
            while let Some(c) = rd.next_cell()? {
                if !c.entries.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::corrupt(&path, "cell entries not sorted/unique"));
                }
                cells += 1;
                entries += c.entries.len() as u64;
            }
            if cells != r.cells || entries != r.entries {
                return Err(Error::corrupt(&path, "manifest counts disagree with run"));
            }
        }
        Ok(())
    }
}

/// Yields each logical cell of a grid once, in strictly increasing z,
/// merging equal-z cells across runs on the fly.
pub struct GridCursor {
    readers: Vec<RunReader>,
    heads: Vec<Option<Cell>>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
    failed: bool,
}

impl GridCursor {
    fn new(mut readers: Vec<RunReader>) -> Result<Self> {
        let mut heads = Vec::with_capacity(readers.len());
        let mut heap = BinaryHeap::new();
        for (i, r) in readers.iter_mut().enumerate() {
            let head = r.next_cell()?;
            if let Some(c) = &head {
                heap.push(Reverse((c.z.0, i)));
            }
            heads.push(head);
        }
        Ok(GridCursor {
            readers,
            heads,
            heap,
            failed: false,
        })
    }

    /// Physical cell records read from run files so far.
    pub fn physical_reads(&self) -> u64 {
        self.readers.iter().map(RunReader::cells_read).sum()
    }

    fn advance(&mut self, i: usize) -> Result<Cell> {
        let cell = self.heads[i].take().expect("heap points at a loaded head");
        self.heads[i] = self.readers[i].next_cell()?;
        if let Some(c) = &self.heads[i] {
            self.heap.push(Reverse((c.z.0, i)));
        }
        Ok(cell)
    }

    fn next_cell(&mut self) -> Result<Option<Cell>> {
        let Some(Reverse((z, i))) = self.heap.pop() else {
            return Ok(None);
        };
        let mut cell = self.advance(i)?;
        let mut merged = false;
        while let Some(Reverse((z2, j))) = self.heap.peek().copied() {
            if z2 != z {
                break;
            }
            self.heap.pop();
            let other = self.advance(j)?;
            cell.entries.extend(other.entries);
            merged = true;
        }
        if merged {
            cell.entries.sort_unstable();
            cell.entries.dedup();
        }
        Ok(Some(cell))
    }
}

impl Iterator for GridCursor {
    type Item = Result<Cell>;

    fn next(&mut self) -> Option<Result<Cell>> {
        if self.failed {
            return None;
        }
        match self.next_cell() {
            Ok(c) => c.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}
