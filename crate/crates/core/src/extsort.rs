//! Bounded-memory external sort over fixed-width binary records.
//!
//! Records are buffered up to a budget, sorted, and spilled as sorted chunk
//! files; [`ExternalSorter::finish`] returns a k-way merge over the chunks.
//! Duplicates are preserved; callers collapse or aggregate adjacent equal
//! records as they need.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

pub trait FixedRecord: Ord + Copy + Send {
    const SIZE: usize;
    fn encode(&self, out: &mut [u8]);
    fn decode(buf: &[u8]) -> Self;
}

pub struct ExternalSorter<R: FixedRecord> {
    budget: usize,
    buf: Vec<R>,
    chunks: Vec<PathBuf>,
    tmp_root: PathBuf,
    tmp: Option<TempDir>,
    exec: Execution,
}

impl<R: FixedRecord> ExternalSorter<R> {
    /// `budget` is the number of records held in memory before a spill;
    /// it must be at least 2.
    pub fn new(budget: usize, tmp_root: &Path, exec: Execution) -> Result<Self> {
        if budget < 2 {
            return Err(Error::InvalidParams(format!(
                "memory budget must be at least 2 records, got {budget}"
            )));
        }
        Ok(ExternalSorter {
            budget,
            buf: Vec::with_capacity(budget.min(1 << 20)),
            chunks: Vec::new(),
            tmp_root: tmp_root.to_path_buf(),
            tmp: None,
            exec,
        })
    }

    pub fn push(&mut self, r: R) -> Result<()> {
        self.buf.push(r);
        if self.buf.len() >= self.budget {
            self.spill()?;
        }
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = R>>(&mut self, items: I) -> Result<()> {
        for r in items {
            self.push(r)?;
        }
        Ok(())
    }

    /// Number of chunk files written so far.
    pub fn spilled_chunks(&self) -> usize {
        self.chunks.len()
    }

    fn spill(&mut self) -> Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        if self.tmp.is_none() {
            std::fs::create_dir_all(&self.tmp_root).map_err(|e| Error::io(&self.tmp_root, e))?;
            let dir = tempfile::Builder::new()
                .prefix("extsort-")
                .tempdir_in(&self.tmp_root)
                .map_err(|e| Error::io(&self.tmp_root, e))?;
            self.tmp = Some(dir);
        }
        let dir = self.tmp.as_ref().map(|d| d.path().to_path_buf()).unwrap_or_default();
        let path = dir.join(format!("chunk-{:06}.bin", self.chunks.len()));
        exec::sort_unstable(self.exec, &mut self.buf);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::with_capacity(1 << 16, file);
        let mut rec = vec![0u8; R::SIZE];
        for r in self.buf.drain(..) {
            r.encode(&mut rec);
            w.write_all(&rec).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.chunks.push(path);
        Ok(())
    }

    pub fn finish(mut self) -> Result<SortedRecords<R>> {
        if self.chunks.is_empty() {
            exec::sort_unstable(self.exec, &mut self.buf);
            return Ok(SortedRecords {
                inner: Inner::Memory(std::mem::take(&mut self.buf).into_iter()),
                _tmp: None,
            });
        }
        self.spill()?;
        let mut readers = Vec::with_capacity(self.chunks.len());
        for path in &self.chunks {
            readers.push(ChunkReader::open(path)?);
        }
        let mut heap = BinaryHeap::with_capacity(readers.len());
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some(rec) = r.next_record()? {
                heap.push(Reverse((rec, i)));
            }
        }
        Ok(SortedRecords {
            inner: Inner::Merge { readers, heap },
            _tmp: self.tmp.take(),
        })
    }
}

pub(crate) struct ChunkReader<R> {
    path: PathBuf,
    reader: BufReader<File>,
    buf: Vec<u8>,
    _marker: std::marker::PhantomData<R>,
}

impl<R: FixedRecord> ChunkReader<R> {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(ChunkReader {
            path: path.to_path_buf(),
            reader: BufReader::with_capacity(1 << 16, file),
            buf: vec![0u8; R::SIZE],
            _marker: std::marker::PhantomData,
        })
    }

    pub(crate) fn next_record(&mut self) -> Result<Option<R>> {
        match read_full(&mut self.reader, &mut self.buf) {
            Ok(0) => Ok(None),
            Ok(n) if n == R::SIZE => Ok(Some(R::decode(&self.buf))),
            Ok(_) => Err(Error::corrupt(&self.path, "truncated record")),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

/// Like `read_exact`, but reports a clean EOF as `Ok(0)`.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

enum Inner<R: FixedRecord> {
    Memory(std::vec::IntoIter<R>),
    Merge {
        readers: Vec<ChunkReader<R>>,
        heap: BinaryHeap<Reverse<(R, usize)>>,
    },
}

/// Records in ascending order. Holds the spill directory alive until dropped.
pub struct SortedRecords<R: FixedRecord> {
    inner: Inner<R>,
    _tmp: Option<TempDir>,
}

impl<R: FixedRecord> Iterator for SortedRecords<R> {
    type Item = Result<R>;

    fn next(&mut self) -> Option<Result<R>> {
        match &mut self.inner {
            Inner::Memory(it) => it.next().map(Ok),
            Inner::Merge { readers, heap } => {
                let Reverse((rec, i)) = heap.pop()?;
                match readers[i].next_record() {
                    Ok(Some(next)) => heap.push(Reverse((next, i))),
                    Ok(None) => {}
                    Err(e) => return Some(Err(e)),
                }
                Some(Ok(rec))
            }
        }
    }
}
