//! Structure-file, template-file and keyword-file ingestion, site patch
//! extraction and duplicate removal.
//!
//! Structure files use the fixed-width legacy layout; only these columns
//! (1-based, inclusive) are read:
//!
//! | record | columns | field                          |
//! |--------|---------|--------------------------------|
//! | ATOM   | 1-6     | record name `ATOM  `           |
//! |        | 7-11    | atom serial                    |
//! |        | 13-16   | atom name                      |
//! |        | 17      | alternate location             |
//! |        | 18-20   | residue name                   |
//! |        | 22      | chain id                       |
//! |        | 23-26   | residue sequence number        |
//! |        | 31-54   | x, y, z (3 × 8 columns)        |
//! |        | 77-78   | element (optional)             |
//! | SITE   | 12-14   | site identifier                |
//! |        | 19-21, 23, 24-27 | residue 1 name, chain, seq; residues 2-4 follow at +11 columns |
//! | HEADER | 63-66   | structure id (optional)        |
//! | ENDMDL |         | ends the first model; later ATOM records are ignored |
//!
//! Template files are whitespace separated, one atom per line:
//! `template_id residue_name [residue_seq] atom_name x y z`, `#` starts a
//! comment. Keyword files are tab separated: `entity_id<TAB>kw<TAB>kw...`.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::geometry::{distance, Point3};

/// Coordinates of duplicate patches agree within this distance (Å).
pub const DUPLICATE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomRecord {
    pub atom_ordinal: u32,
    pub element: String,
    pub atom_name: String,
    pub residue_ordinal: u32,
    pub residue_name: String,
    pub chain_id: char,
    pub residue_seq: i32,
    pub position: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protein {
    pub protein_id: String,
    pub atoms: Vec<AtomRecord>,
    pub residue_count: usize,
}

impl Protein {
    /// Builds a protein from atoms whose residue ordinals are already
    /// assigned; `residue_count` is derived.
    pub fn new(protein_id: impl Into<String>, atoms: Vec<AtomRecord>) -> Self {
        let residue_count = atoms
            .iter()
            .map(|a| a.residue_ordinal)
            .collect::<BTreeSet<_>>()
            .len();
        Protein {
            protein_id: protein_id.into(),
            atoms,
            residue_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatchOrigin {
    SiteRecord,
    Template,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub patch_id: String,
    pub source_protein_id: String,
    pub atoms: Vec<AtomRecord>,
    pub origin: PatchOrigin,
}

impl Patch {
    /// Treats a whole structure as one patch.
    pub fn from_protein(p: &Protein, origin: PatchOrigin) -> Self {
        Patch {
            patch_id: p.protein_id.clone(),
            source_protein_id: p.protein_id.clone(),
            atoms: p.atoms.clone(),
            origin,
        }
    }

    pub fn as_protein(&self) -> Protein {
        Protein::new(self.patch_id.clone(), self.atoms.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordAnnotation {
    pub entity_id: String,
    pub keywords: BTreeSet<String>,
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

/// Byte-column slice, 1-based inclusive; `None` when the line is too short.
fn cols(line: &[u8], from: usize, to: usize) -> Option<&[u8]> {
    if line.len() < from {
        return None;
    }
    Some(&line[from - 1..to.min(line.len())])
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim().to_string()
}

fn number<T: std::str::FromStr>(line: &[u8], from: usize, to: usize) -> Option<T> {
    let s = std::str::from_utf8(cols(line, from, to)?).ok()?.trim();
    s.parse().ok()
}

fn coord(line: &[u8], from: usize) -> Option<f64> {
    number::<f64>(line, from, from + 7).filter(|v| v.is_finite())
}

fn read_lines<R: BufRead>(mut reader: R) -> Result<Vec<Vec<u8>>> {
    let mut lines = Vec::new();
    loop {
        let mut buf = Vec::new();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<stream>", e))?;
        if n == 0 {
            break;
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        lines.push(buf);
    }
    Ok(lines)
}

/// One residue reference inside a SITE record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteResidue {
    pub residue_name: String,
    pub chain_id: char,
    pub residue_seq: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteDefinition {
    pub site_id: String,
    pub residues: Vec<SiteResidue>,
    /// Residue slots whose fields could not be parsed.
    pub unparsable: usize,
}

/// Everything read from one structure file.
#[derive(Debug, Clone)]
pub struct StructureFile {
    pub protein: Protein,
    pub sites: Vec<SiteDefinition>,
}

/// Parses ATOM records (first model; altloc blank or `A`) and SITE records.
///
/// The protein id is taken from the HEADER record when present, else
/// `fallback_id`. A new residue ordinal starts whenever the
/// (chain, residue sequence number) pair changes between consecutive atoms.
pub fn parse_structure_file<R: BufRead>(reader: R, fallback_id: &str) -> Result<StructureFile> {
    let lines = read_lines(reader)?;
    let mut atoms: Vec<AtomRecord> = Vec::new();
    let mut header_id = None;
    let mut in_first_model = true;
    let mut last_key: Option<(char, i32)> = None;
    let mut residue_ordinal = 0u32;
    let mut sites: Vec<SiteDefinition> = Vec::new();

    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        if line.starts_with(b"HEADER") && header_id.is_none() {
            let id = cols(line, 63, 66).map(text).unwrap_or_default();
            if !id.is_empty() {
                header_id = Some(id);
            }
        } else if line.starts_with(b"ENDMDL") {
            in_first_model = false;
        } else if line.starts_with(b"SITE  ") {
            parse_site_line(line, &mut sites);
        } else if line.starts_with(b"ATOM  ") && in_first_model {
            let altloc = cols(line, 17, 17).and_then(|b| b.first().copied()).unwrap_or(b' ');
            let serial: Option<i64> = number(line, 7, 11);
            let seq: Option<i32> = number(line, 23, 26);
            let (x, y, z) = (coord(line, 31), coord(line, 39), coord(line, 47));
            let (Some(_), Some(seq), Some(x), Some(y), Some(z)) = (serial, seq, x, y, z) else {
                return Err(malformed(lineno, "ATOM record fails fixed-width numeric parse"));
            };
            if altloc != b' ' && altloc != b'A' {
                continue;
            }
            let atom_name = cols(line, 13, 16).map(text).unwrap_or_default();
            if atom_name.is_empty() {
                return Err(malformed(lineno, "ATOM record without atom name"));
            }
            let chain_id = cols(line, 22, 22)
                .and_then(|b| b.first().copied())
                .map(char::from)
                .unwrap_or(' ');
            let key = (chain_id, seq);
            if let Some(prev) = last_key {
                if prev != key {
                    residue_ordinal += 1;
                }
            }
            last_key = Some(key);
            let mut element = cols(line, 77, 78).map(text).unwrap_or_default();
            if element.is_empty() {
                element = atom_name
                    .chars()
                    .find(|c| c.is_ascii_alphabetic())
                    .map(String::from)
                    .unwrap_or_default();
            }
            atoms.push(AtomRecord {
                atom_ordinal: atoms.len() as u32,
                element,
                atom_name,
                residue_ordinal,
                residue_name: cols(line, 18, 20).map(text).unwrap_or_default(),
                chain_id,
                residue_seq: seq,
                position: Point3::new(x, y, z),
            });
        }
    }

    if atoms.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let id = header_id.unwrap_or_else(|| fallback_id.to_string());
    Ok(StructureFile {
        protein: Protein::new(id, atoms),
        sites,
    })
}

fn parse_site_line(line: &[u8], sites: &mut Vec<SiteDefinition>) {
    let site_id = cols(line, 12, 14).map(text).unwrap_or_default();
    let idx = match sites.iter().position(|s| s.site_id == site_id) {
        Some(i) => i,
        None => {
            sites.push(SiteDefinition {
                site_id,
                residues: Vec::new(),
                unparsable: 0,
            });
            sites.len() - 1
        }
    };
    let site = &mut sites[idx];
    for slot in 0..4 {
        let base = 19 + 11 * slot;
        let name = cols(line, base, base + 2).map(text).unwrap_or_default();
        let seq_field = cols(line, base + 5, base + 8).map(text).unwrap_or_default();
        if name.is_empty() && seq_field.is_empty() {
            continue;
        }
        let chain = cols(line, base + 4, base + 4)
            .and_then(|b| b.first().copied())
            .map(char::from)
            .unwrap_or(' ');
        match seq_field.parse::<i32>() {
            Ok(seq) if !name.is_empty() => site.residues.push(SiteResidue {
                residue_name: name,
                chain_id: chain,
                residue_seq: seq,
            }),
            _ => site.unparsable += 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SiteExtraction {
    pub patches: Vec<Patch>,
    /// Residue references that matched no ATOM record (or failed to parse).
    pub unresolved_residues: usize,
    /// Sites dropped because none of their residues resolved.
    pub dropped_sites: usize,
}

/// One patch per site identifier, holding every atom of the listed
/// residues (matched on chain, sequence number and residue name).
pub fn extract_site_patches(sites: &[SiteDefinition], protein: &Protein) -> SiteExtraction {
    let mut out = SiteExtraction::default();
    for site in sites {
        out.unresolved_residues += site.unparsable;
        let mut wanted: Vec<&SiteResidue> = Vec::new();
        for r in &site.residues {
            let found = protein.atoms.iter().any(|a| {
                a.chain_id == r.chain_id && a.residue_seq == r.residue_seq && a.residue_name == r.residue_name
            });
            if found {
                wanted.push(r);
            } else {
                out.unresolved_residues += 1;
            }
        }
        let atoms: Vec<AtomRecord> = protein
            .atoms
            .iter()
            .filter(|a| {
                wanted.iter().any(|r| {
                    a.chain_id == r.chain_id && a.residue_seq == r.residue_seq && a.residue_name == r.residue_name
                })
            })
            .cloned()
            .collect();
        if atoms.is_empty() {
            out.dropped_sites += 1;
            continue;
        }
        out.patches.push(Patch {
            patch_id: format!("{}_{}", protein.protein_id, out.patches.len()),
            source_protein_id: protein.protein_id.clone(),
            atoms,
            origin: PatchOrigin::SiteRecord,
        });
    }
    out
}

/// Parses a structure file and extracts its site patches in one pass.
pub fn extract_site_patches_from<R: BufRead>(reader: R, fallback_id: &str) -> Result<(Protein, SiteExtraction)> {
    let file = parse_structure_file(reader, fallback_id)?;
    let ex = extract_site_patches(&file.sites, &file.protein);
    Ok((file.protein, ex))
}

/// Source protein of a template id: the part before the first `_`.
pub fn template_source_id(template_id: &str) -> &str {
    template_id.split('_').next().unwrap_or(template_id)
}

/// One patch per template id, atoms in file order. Residues are delimited
/// by the explicit sequence column when present; otherwise a new residue
/// starts when the residue name changes or an atom name repeats.
pub fn parse_template_file<R: BufRead>(reader: R) -> Result<Vec<Patch>> {
    struct Building {
        patch: Patch,
        last_key: Option<(String, Option<i32>)>,
        seen_names: Vec<String>,
        residue: u32,
    }
    let lines = read_lines(reader)?;
    let mut order: Vec<String> = Vec::new();
    let mut building: HashMap<String, Building> = HashMap::new();

    for (i, raw) in lines.iter().enumerate() {
        let lineno = i + 1;
        let line = std::str::from_utf8(raw).map_err(|_| malformed(lineno, "not UTF-8"))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let (tid, res, seq, atom, xyz) = match f.len() {
            6 => (f[0], f[1], None, f[2], &f[3..6]),
            7 => {
                let seq = f[2]
                    .parse::<i32>()
                    .map_err(|_| malformed(lineno, "residue sequence number is not an integer"))?;
                (f[0], f[1], Some(seq), f[3], &f[4..7])
            }
            n => return Err(malformed(lineno, format!("expected 6 or 7 fields, found {n}"))),
        };
        let mut c = [0.0; 3];
        for (k, v) in xyz.iter().enumerate() {
            c[k] = v
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(lineno, format!("bad coordinate {v:?}")))?;
        }
        let b = building.entry(tid.to_string()).or_insert_with(|| {
            order.push(tid.to_string());
            Building {
                patch: Patch {
                    patch_id: tid.to_string(),
                    source_protein_id: template_source_id(tid).to_string(),
                    atoms: Vec::new(),
                    origin: PatchOrigin::Template,
                },
                last_key: None,
                seen_names: Vec::new(),
                residue: 0,
            }
        });
        let key = (res.to_string(), seq);
        let new_residue = match &b.last_key {
            None => false,
            Some(prev) if seq.is_some() || prev.1.is_some() => *prev != key,
            Some(prev) => prev.0 != key.0 || b.seen_names.iter().any(|n| n == atom),
        };
        if new_residue {
            b.residue += 1;
            b.seen_names.clear();
        }
        b.last_key = Some(key);
        b.seen_names.push(atom.to_string());
        let ordinal = b.patch.atoms.len() as u32;
        b.patch.atoms.push(AtomRecord {
            atom_ordinal: ordinal,
            element: atom
                .chars()
                .find(|c| c.is_ascii_alphabetic())
                .map(String::from)
                .unwrap_or_default(),
            atom_name: atom.to_string(),
            residue_ordinal: b.residue,
            residue_name: res.to_string(),
            chain_id: ' ',
            residue_seq: seq.unwrap_or(b.residue as i32),
            position: Point3::new(c[0], c[1], c[2]),
        });
    }
    Ok(order
        .into_iter()
        .map(|id| building.remove(&id).expect("ordered id present").patch)
        .collect())
}

/// True when `a` and `b` are the same patch up to coordinate tolerance,
/// comparing atoms pairwise in file order.
pub fn patches_duplicate(a: &Patch, b: &Patch) -> bool {
    a.atoms.len() == b.atoms.len()
        && a.atoms.iter().zip(&b.atoms).all(|(x, y)| {
            x.atom_name == y.atom_name
                && x.residue_name == y.residue_name
                && distance(x.position, y.position) <= DUPLICATE_TOLERANCE
        })
}

/// Removes duplicate patches. Within a duplicate group the site-record
/// patch wins, then the lexicographically smallest id. Survivors keep their
/// input order and are pairwise non-duplicate, which makes this idempotent.
pub fn dedup_patches(patches: Vec<Patch>) -> Vec<Patch> {
    fn signature(p: &Patch) -> (usize, Vec<(&str, &str)>) {
        (
            p.atoms.len(),
            p.atoms
                .iter()
                .map(|a| (a.atom_name.as_str(), a.residue_name.as_str()))
                .collect(),
        )
    }
    let mut priority: Vec<usize> = (0..patches.len()).collect();
    priority.sort_by(|&i, &j| {
        let (a, b) = (&patches[i], &patches[j]);
        (a.origin, &a.patch_id, i).cmp(&(b.origin, &b.patch_id, j))
    });
    type Signature<'a> = (usize, Vec<(&'a str, &'a str)>);
    let mut kept_by_sig: HashMap<Signature, Vec<usize>> = HashMap::new();
    let mut keep = vec![false; patches.len()];
    for &i in &priority {
        let bucket = kept_by_sig.entry(signature(&patches[i])).or_default();
        if bucket.iter().all(|&k| !patches_duplicate(&patches[k], &patches[i])) {
            bucket.push(i);
            keep[i] = true;
        }
    }
    drop(kept_by_sig);
    patches
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Reads `entity_id<TAB>keyword...` lines; repeated ids merge their sets.
pub fn parse_keyword_file<R: BufRead>(reader: R) -> Result<Vec<KeywordAnnotation>> {
    let lines = read_lines(reader)?;
    let mut out: Vec<KeywordAnnotation> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, raw) in lines.iter().enumerate() {
        let lineno = i + 1;
        let line = std::str::from_utf8(raw).map_err(|_| malformed(lineno, "not UTF-8"))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("").trim();
        if id.is_empty() {
            return Err(malformed(lineno, "empty entity id"));
        }
        let k = *index.entry(id.to_string()).or_insert_with(|| {
            out.push(KeywordAnnotation {
                entity_id: id.to_string(),
                keywords: BTreeSet::new(),
            });
            out.len() - 1
        });
        out[k].keywords.extend(
            fields
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from),
        );
    }
    Ok(out)
}

/// Formats one ATOM record in the fixed-width layout read by
/// [`parse_structure_file`].
pub fn format_atom_line(serial: u32, atom_name: &str, residue_name: &str, chain: char, seq: i32, p: Point3, element: &str) -> String {
    format!(
        "ATOM  {:>5} {:<4} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {:>2}",
        serial % 100_000,
        atom_name,
        residue_name,
        chain,
        seq,
        p.x,
        p.y,
        p.z,
        element
    )
}

/// Formats the SITE records of one site, four residues per line.
pub fn format_site_lines(site_id: &str, residues: &[SiteResidue]) -> Vec<String> {
    residues
        .chunks(4)
        .enumerate()
        .map(|(i, chunk)| {
            let mut s = format!("SITE   {:>3} {:>3} {:>2} ", i + 1, site_id, residues.len());
            for r in chunk {
                s.push_str(&format!("{:>3} {}{:>4}  ", r.residue_name, r.chain_id, r.residue_seq));
            }
            s.trim_end().to_string()
        })
        .collect()
}

/// Renders a protein (and optional sites) as a structure file.
pub fn format_structure_file(protein: &Protein, sites: &[SiteDefinition]) -> String {
    let mut out = format!("{:<62}{:<4}\n", "HEADER    SYNTHETIC STRUCTURE", protein.protein_id);
    for s in sites {
        for l in format_site_lines(&s.site_id, &s.residues) {
            out.push_str(&l);
            out.push('\n');
        }
    }
    for a in &protein.atoms {
        out.push_str(&format_atom_line(
            a.atom_ordinal + 1,
            &a.atom_name,
            &a.residue_name,
            a.chain_id,
            a.residue_seq,
            a.position,
            &a.element,
        ));
        out.push('\n');
    }
    out.push_str("END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn atom_line(serial: u32, name: &str, res: &str, chain: char, seq: i32, p: [f64; 3]) -> String {
        format_atom_line(serial, name, res, chain, seq, Point3::from_array(p), &name[..1])
    }

    fn site_line(seq: u32, id: &str, residues: &[(&str, char, i32)]) -> String {
        let rs: Vec<SiteResidue> = residues
            .iter()
            .map(|(n, c, s)| SiteResidue {
                residue_name: n.to_string(),
                chain_id: *c,
                residue_seq: *s,
            })
            .collect();
        let mut lines = format_site_lines(id, &rs);
        assert_eq!(seq, 1);
        lines.remove(0)
    }

    fn three_residue_file() -> String {
        let mut lines = vec![format!("{:<62}{}", "HEADER    TEST", "1ABC")];
        lines.push(site_line(1, "AC1", &[("ALA", 'A', 1), ("GLY", 'A', 2), ("SER", 'A', 3)]));
        lines.push(site_line(1, "AC2", &[("GLY", 'A', 2), ("TRP", 'A', 99)]));
        let mut serial = 1;
        for (seq, res) in [(1, "ALA"), (2, "GLY"), (3, "SER")] {
            for (k, name) in ["N", "CA", "C", "O"].iter().enumerate() {
                let base = seq as f64 * 3.8;
                lines.push(atom_line(serial, name, res, 'A', seq, [base + k as f64 * 0.7, 0.5 * k as f64, 0.0]));
                serial += 1;
            }
        }
        lines.push("HETATM   13  O   HOH A 100       0.000   0.000   0.000  1.00  0.00           O".into());
        lines.join("\n")
    }

    #[test]
    fn parses_atoms_and_header() {
        let f = parse_structure_file(three_residue_file().as_bytes(), "fallback").unwrap();
        assert_eq!(f.protein.protein_id, "1ABC");
        assert_eq!(f.protein.atoms.len(), 12);
        assert_eq!(f.protein.residue_count, 3);
        let ca = &f.protein.atoms[1];
        assert_eq!(ca.atom_name, "CA");
        assert_eq!(ca.residue_name, "ALA");
        assert_eq!(ca.element, "C");
        assert_eq!(ca.position, Point3::new(3.8 + 0.7, 0.5, 0.0));
        assert_eq!(f.sites.len(), 2);
    }

    #[test]
    fn two_atom_file() {
        let text = [
            atom_line(1, "N", "ALA", 'A', 1, [1.0, 2.0, 3.0]),
            atom_line(2, "CA", "ALA", 'A', 1, [2.0, 2.0, 3.0]),
        ]
        .join("\n");
        let f = parse_structure_file(text.as_bytes(), "X").unwrap();
        assert_eq!(f.protein.protein_id, "X");
        assert_eq!(f.protein.atoms.len(), 2);
        assert_eq!(f.protein.residue_count, 1);
    }

    #[test]
    fn structure_errors() {
        assert!(matches!(
            parse_structure_file("REMARK nothing\n".as_bytes(), "X"),
            Err(Error::EmptyStructure)
        ));
        let mut bad = atom_line(1, "CA", "ALA", 'A', 1, [1.0, 2.0, 3.0]);
        bad.replace_range(30..38, "     abc");
        let text = format!("{}\n{}", atom_line(1, "N", "ALA", 'A', 1, [0.0; 3]), bad);
        match parse_structure_file(text.as_bytes(), "X") {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let mut nan = atom_line(1, "CA", "ALA", 'A', 1, [1.0, 2.0, 3.0]);
        nan.replace_range(30..38, "     NaN");
        assert!(parse_structure_file(nan.as_bytes(), "X").is_err());
    }

    #[test]
    fn first_model_and_altloc_only() {
        let mut alt_b = atom_line(3, "CB", "ALA", 'A', 1, [0.0; 3]);
        alt_b.replace_range(16..17, "B");
        let mut alt_a = atom_line(4, "CG", "ALA", 'A', 1, [0.0; 3]);
        alt_a.replace_range(16..17, "A");
        let text = [
            "MODEL        1".to_string(),
            atom_line(1, "N", "ALA", 'A', 1, [0.0; 3]),
            atom_line(2, "CA", "ALA", 'A', 1, [1.0, 0.0, 0.0]),
            alt_b,
            alt_a,
            "ENDMDL".into(),
            "MODEL        2".into(),
            atom_line(1, "N", "ALA", 'A', 1, [9.0; 3]),
        ]
        .join("\n");
        let f = parse_structure_file(text.as_bytes(), "X").unwrap();
        let names: Vec<_> = f.protein.atoms.iter().map(|a| a.atom_name.as_str()).collect();
        assert_eq!(names, ["N", "CA", "CG"]);
    }

    #[test]
    fn site_patches() {
        let text = three_residue_file();
        let (protein, ex) = extract_site_patches_from(text.as_bytes(), "X").unwrap();
        assert_eq!(ex.patches.len(), 2);
        assert_eq!(ex.patches[0].patch_id, "1ABC_0");
        assert_eq!(ex.patches[1].patch_id, "1ABC_1");
        assert_eq!(ex.patches[0].atoms.len(), 12);
        assert_eq!(ex.patches[0].origin, PatchOrigin::SiteRecord);
        // TRP 99 is absent: partial patch from GLY 2 plus one warning
        assert_eq!(ex.unresolved_residues, 1);
        let p1 = &ex.patches[1];
        assert_eq!(p1.atoms.len(), 4);
        assert!(p1.atoms.iter().all(|a| a.residue_seq == 2));
        assert!(p1
            .atoms
            .iter()
            .all(|a| protein.atoms[a.atom_ordinal as usize] == *a));
    }

    #[test]
    fn unresolvable_site_is_dropped() {
        let text = format!(
            "{}\n{}",
            site_line(1, "ZZ1", &[("TRP", 'B', 5)]),
            atom_line(1, "CA", "ALA", 'A', 1, [0.0; 3])
        );
        let (_, ex) = extract_site_patches_from(text.as_bytes(), "X").unwrap();
        assert!(ex.patches.is_empty());
        assert_eq!(ex.dropped_sites, 1);
        assert_eq!(ex.unresolved_residues, 1);
    }

    #[test]
    fn templates() {
        let text = "# id res atom x y z\nT1_a ALA N 0 0 0\nT1_a ALA CA 1.4 0 0\nT1_a ALA C 2 1 0\nT1_a GLY N 3 1 0\n";
        let ps = parse_template_file(text.as_bytes()).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].atoms.len(), 4);
        assert_eq!(ps[0].origin, PatchOrigin::Template);
        assert_eq!(ps[0].source_protein_id, "T1");
        assert_eq!(ps[0].atoms[3].residue_ordinal, 1);
        assert!(parse_template_file("".as_bytes()).unwrap().is_empty());
        match parse_template_file("T ALA CA 1 x 3\n".as_bytes()) {
            Err(Error::MalformedRecord { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // repeated atom name within the same residue name starts a new residue
        let t2 = "T ALA N 0 0 0\nT ALA CA 1 0 0\nT ALA N 4 0 0\n";
        let ps = parse_template_file(t2.as_bytes()).unwrap();
        assert_eq!(ps[0].atoms[2].residue_ordinal, 1);
        // explicit sequence numbers
        let t3 = "T ALA 7 N 0 0 0\nT ALA 7 CA 1 0 0\nT ALA 8 N 4 0 0\n";
        let ps = parse_template_file(t3.as_bytes()).unwrap();
        assert_eq!(ps[0].atoms[2].residue_ordinal, 1);
        assert_eq!(ps[0].atoms[2].residue_seq, 8);
    }

    fn tiny_patch(id: &str, origin: PatchOrigin, shift: f64) -> Patch {
        let atoms = (0..3)
            .map(|k| AtomRecord {
                atom_ordinal: k,
                element: "C".into(),
                atom_name: ["N", "CA", "C"][k as usize].into(),
                residue_ordinal: 0,
                residue_name: "ALA".into(),
                chain_id: 'A',
                residue_seq: 1,
                position: Point3::new(k as f64 + shift, 0.0, 0.0),
            })
            .collect();
        Patch {
            patch_id: id.into(),
            source_protein_id: template_source_id(id).into(),
            atoms,
            origin,
        }
    }

    #[test]
    fn dedup_rules() {
        let a = tiny_patch("Z_0", PatchOrigin::Template, 0.0);
        let b = tiny_patch("A_0", PatchOrigin::Template, 0.0);
        let out = dedup_patches(vec![a.clone(), b.clone()]);
        assert_eq!(out, vec![b.clone()]);

        let site = tiny_patch("Z_1", PatchOrigin::SiteRecord, 0.0005);
        let out = dedup_patches(vec![b.clone(), site.clone()]);
        assert_eq!(out, vec![site]);

        let far = tiny_patch("Q_0", PatchOrigin::Template, 0.5);
        assert_eq!(dedup_patches(vec![b.clone(), far.clone()]).len(), 2);
    }

    #[test]
    fn keywords() {
        let text = "P1\tkA\tkB\nP1\tkC\nP2\n\n";
        let kw = parse_keyword_file(text.as_bytes()).unwrap();
        assert_eq!(kw.len(), 2);
        assert_eq!(kw[0].keywords, ["kA", "kB", "kC"].map(String::from).into());
        assert!(kw[1].keywords.is_empty());
        assert!(matches!(
            parse_keyword_file("\tkA\n".as_bytes()),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let _ = parse_structure_file(&bytes[..], "X");
        }

        #[test]
        fn parser_is_total_on_atomish_lines(
            tails in proptest::collection::vec("[ -~]{0,80}", 0..8)
        ) {
            let text: String = tails.iter().map(|t| format!("ATOM  {t}\nSITE  {t}\n")).collect();
            let _ = parse_structure_file(text.as_bytes(), "X");
        }

        #[test]
        fn dedup_is_idempotent(shifts in proptest::collection::vec((0u8..4, 0.0f64..0.003, any::<bool>()), 0..12)) {
            let ps: Vec<Patch> = shifts
                .iter()
                .enumerate()
                .map(|(i, (g, s, site))| {
                    let origin = if *site { PatchOrigin::SiteRecord } else { PatchOrigin::Template };
                    tiny_patch(&format!("P{i}_0"), origin, *g as f64 + s)
                })
                .collect();
            let once = dedup_patches(ps);
            let twice = dedup_patches(once.clone());
            prop_assert_eq!(once, twice);
        }
    }
}
