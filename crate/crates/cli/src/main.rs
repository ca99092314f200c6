mod config;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use patchgrid::baseline::{naive_match, FrameMode, NaiveCaps, DEFAULT_TRIPLE_CAP};
use patchgrid::eval::{sweep, Annotations, EvalConfig, EvalPair, StructuralIdentities};
use patchgrid::fsutil::write_atomic;
use patchgrid::ingest::{
    dedup_patches, extract_site_patches, parse_keyword_file, parse_structure_file, parse_template_file, StructureFile,
};
use patchgrid::matcher::{match_query, read_results_tsv, write_results_tsv, MatchOptions};
use patchgrid::preprocess::{BuildOptions, PatchDatabase};
use patchgrid::synth::{self, InstanceSizes};
use patchgrid::{Execution, GridParams, Patch, PatchOrigin, Protein};

use config::{Config, ConfigArgs};

#[derive(Parser)]
#[command(name = "patchgrid", version, about = "Disk-based geometric hashing for protein substructure search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a patch database from SITE records and template files
    #[command(after_help = "Example:\n  patchgrid build-db --db ppd --structures pdb/*.pdb --templates csa.txt --delta 1.0")]
    BuildDb {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        inputs: PatchInputs,
    },
    /// Match one query structure against a database
    #[command(after_help = "Example:\n  patchgrid query --db ppd --query 1abc.pdb --out 1abc.tsv --tau-pp 0.9")]
    Query {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Query structure file
        #[arg(long, value_name = "FILE")]
        query: PathBuf,
        /// Result TSV; statistics go to `<out>.stats`
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Add patches to an existing database as a new run
    #[command(after_help = "Example:\n  patchgrid add --db ppd --structures new/*.pdb --compact")]
    Add {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        inputs: PatchInputs,
        /// Merge all runs into one afterwards
        #[arg(long)]
        compact: bool,
    },
    /// Redundancy-filtered keyword-recovery sweep over query results
    #[command(after_help = "Example:\n  patchgrid eval --db ppd --results out/*.tsv --annotations kw.tsv --structures pdb/*.pdb --out tp.tsv")]
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Result files written by `query` (run with tau_pp at or below the smallest sweep value)
        #[arg(long, num_args = 1.., required = true, value_name = "FILE")]
        results: Vec<PathBuf>,
        /// Keyword TSV for query and source proteins
        #[arg(long, value_name = "FILE")]
        annotations: PathBuf,
        /// Structure files of the query and patch source proteins
        #[arg(long, num_args = 1.., value_name = "FILE")]
        structures: Vec<PathBuf>,
        /// Comma-separated protein-patch thresholds
        #[arg(long, value_delimiter = ',', default_values_t = [0.80, 0.85, 0.90, 0.95])]
        tau_pp_values: Vec<f64>,
        /// Comma-separated protein-protein thresholds
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
        tau_prot_values: Vec<f64>,
        /// Report TSV (stdout if omitted)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare the disk engine with the in-memory oracle on a synthetic instance
    #[command(after_help = "Examples:\n  patchgrid oracle-compare --seed 7\n  patchgrid oracle-compare --mode all-triples --atoms 20")]
    OracleCompare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, env = "PATCHGRID_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::PerResidue)]
        mode: Mode,
        /// Largest query, in residues (per-residue mode)
        #[arg(long, default_value_t = 30)]
        residues: usize,
        /// Largest number of patches (per-residue mode)
        #[arg(long, default_value_t = 20)]
        patches: usize,
        /// Largest patch, in atoms (per-residue mode)
        #[arg(long, default_value_t = 60)]
        patch_atoms: usize,
        /// Query atoms to enumerate (all-triples mode)
        #[arg(long, default_value_t = 20)]
        atoms: usize,
        /// Largest structure allowed for all-triples enumeration
        #[arg(long, default_value_t = DEFAULT_TRIPLE_CAP)]
        cap: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    PerResidue,
    AllTriples,
}

#[derive(clap::Args)]
struct PatchInputs {
    /// Structure files whose SITE records define patches
    #[arg(long, num_args = 1.., value_name = "FILE")]
    structures: Vec<PathBuf>,
    /// Template files (`id residue [seq] atom x y z` per line)
    #[arg(long, num_args = 1.., value_name = "FILE")]
    templates: Vec<PathBuf>,
}

type CmdResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::BuildDb { cfg, inputs } => resolve(&cfg).and_then(|c| build_db(&c, &inputs)),
        Command::Query { cfg, query, out } => resolve(&cfg).and_then(|c| run_query(&c, &query, &out)),
        Command::Add { cfg, inputs, compact } => resolve(&cfg).and_then(|c| add(&c, &inputs, compact)),
        Command::Eval {
            cfg,
            results,
            annotations,
            structures,
            tau_pp_values,
            tau_prot_values,
            out,
        } => resolve(&cfg).and_then(|c| {
            let ec = EvalConfig {
                tau_pp_values,
                tau_prot_values,
                ideal: 1.0,
            };
            eval(&c, &results, &annotations, &structures, &ec, out.as_deref())
        }),
        Command::OracleCompare {
            cfg,
            seed,
            mode,
            residues,
            patches,
            patch_atoms,
            atoms,
            cap,
        } => resolve(&cfg).and_then(|c| match mode {
            Mode::PerResidue => oracle_per_residue(
                &c,
                seed,
                &InstanceSizes {
                    max_query_residues: residues,
                    max_patches: patches,
                    max_patch_atoms: patch_atoms,
                },
            ),
            Mode::AllTriples => oracle_all_triples(&c, seed, atoms, cap),
        }),
    };
    match out {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn resolve(args: &ConfigArgs) -> Result<Config, String> {
    args.resolve()
}

fn build_options(c: &Config) -> BuildOptions {
    BuildOptions {
        memory_budget: c.mem_budget,
        tmp_dir: c.tmp.clone(),
        execution: Execution::default(),
    }
}

fn match_options(c: &Config) -> MatchOptions {
    MatchOptions {
        memory_budget: c.mem_budget,
        tmp_dir: c.tmp.clone(),
        ..MatchOptions::default()
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "query".into())
}

fn open(path: &Path) -> Result<BufReader<File>, String> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn read_structure(path: &Path) -> Result<StructureFile, String> {
    parse_structure_file(open(path)?, &file_stem(path)).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Default)]
struct Collected {
    structures: usize,
    site_patches: usize,
    templates: usize,
    unresolved: usize,
    dropped_sites: usize,
    patches: Vec<Patch>,
}

fn collect_patches(inputs: &PatchInputs) -> Result<Collected, String> {
    if inputs.structures.is_empty() && inputs.templates.is_empty() {
        return Err("no inputs: pass --structures and/or --templates".into());
    }
    let mut c = Collected::default();
    for path in &inputs.structures {
        let f = read_structure(path)?;
        let ex = extract_site_patches(&f.sites, &f.protein);
        c.structures += 1;
        c.site_patches += ex.patches.len();
        c.unresolved += ex.unresolved_residues;
        c.dropped_sites += ex.dropped_sites;
        c.patches.extend(ex.patches);
    }
    for path in &inputs.templates {
        let t = parse_template_file(open(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
        c.templates += t.len();
        c.patches.extend(t);
    }
    Ok(c)
}

fn check_grid_params(c: &Config, db: &PatchDatabase) -> Result<(), String> {
    let p = db.params();
    if c.explicit_grid.0 && c.delta != p.delta {
        return Err(format!(
            "refused: database {} uses delta {} but delta {} was requested",
            db.dir().display(),
            p.delta,
            c.delta
        ));
    }
    if c.explicit_grid.1 && c.bits_per_axis != p.bits_per_axis {
        return Err(format!(
            "refused: database {} uses bits_per_axis {} but {} was requested",
            db.dir().display(),
            p.bits_per_axis,
            c.bits_per_axis
        ));
    }
    Ok(())
}

fn report_exclusions(report: &patchgrid::preprocess::BuildReport) {
    for (id, why) in &report.excluded {
        eprintln!("warning: patch {id} not inserted: {why}");
    }
}

fn build_db(c: &Config, inputs: &PatchInputs) -> CmdResult {
    let dir = c.db()?;
    if PatchDatabase::exists(dir) {
        let db = PatchDatabase::open(dir).map_err(|e| e.to_string())?;
        check_grid_params(c, &db)?;
        return Err(format!("refused: {} already holds a database; use `add`", dir.display()));
    }
    let collected = collect_patches(inputs)?;
    let before = collected.patches.len();
    let patches = dedup_patches(collected.patches);
    let params = GridParams::new(c.delta, c.bits_per_axis).map_err(|e| e.to_string())?;
    let (db, report) = PatchDatabase::build(dir, &patches, params, &build_options(c)).map_err(|e| e.to_string())?;
    report_exclusions(&report);
    println!("structures parsed\t{}", collected.structures);
    println!("site patches\t{}", collected.site_patches);
    println!("unresolved site residues\t{}", collected.unresolved);
    println!("dropped sites\t{}", collected.dropped_sites);
    println!("template patches\t{}", collected.templates);
    println!("duplicates removed\t{}", before - patches.len());
    println!("patches inserted\t{}", report.registered);
    println!("patches excluded\t{}", report.excluded.len());
    println!("total entries\t{}", db.grid().total_entries());
    println!("mps\t{}", db.mps());
    Ok(ExitCode::SUCCESS)
}

fn run_query(c: &Config, query: &Path, out: &Path) -> CmdResult {
    let dir = c.db()?;
    if !PatchDatabase::exists(dir) {
        return Err(format!("no database at {}", dir.display()));
    }
    let db = PatchDatabase::open(dir).map_err(|e| e.to_string())?;
    check_grid_params(c, &db)?;
    let q = read_structure(query)?.protein;
    let start = Instant::now();
    let outcome = match_query(&q, &db, c.tau_pp, &match_options(c)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    write_atomic(out, |w| write_results_tsv(w, &q.protein_id, &outcome.results)).map_err(|e| e.to_string())?;
    let mut stats_path = out.as_os_str().to_owned();
    stats_path.push(".stats");
    write_atomic(Path::new(&stats_path), |w| {
        writeln!(w, "query_id={}", q.protein_id)?;
        writeln!(w, "tau_pp={}", c.tau_pp)?;
        writeln!(w, "mps={}", db.mps())?;
        outcome.stats.write_kv(w)?;
        writeln!(w, "elapsed_ms={}", elapsed.as_millis())
    })
    .map_err(|e| e.to_string())?;
    println!("{}\t{} results", q.protein_id, outcome.results.len());
    Ok(ExitCode::SUCCESS)
}

fn add(c: &Config, inputs: &PatchInputs, compact: bool) -> CmdResult {
    let dir = c.db()?;
    let mut db = PatchDatabase::open(dir).map_err(|e| e.to_string())?;
    check_grid_params(c, &db)?;
    let collected = collect_patches(inputs)?;
    let patches = dedup_patches(collected.patches);
    let report = db.add_patches(&patches, &build_options(c)).map_err(|e| e.to_string())?;
    report_exclusions(&report);
    if compact {
        db.compact().map_err(|e| e.to_string())?;
    }
    println!("patches inserted\t{}", report.registered);
    println!("patches excluded\t{}", report.excluded.len());
    println!("new entries\t{}", report.new_entries);
    println!("runs\t{}", db.grid().run_count());
    println!("total entries\t{}", db.grid().total_entries());
    println!("mps\t{}", db.mps());
    Ok(ExitCode::SUCCESS)
}

fn eval(
    c: &Config,
    results: &[PathBuf],
    annotations: &Path,
    structures: &[PathBuf],
    ec: &EvalConfig,
    out: Option<&Path>,
) -> CmdResult {
    let db = PatchDatabase::open(c.db()?).map_err(|e| e.to_string())?;
    let annotations = Annotations::new(
        parse_keyword_file(open(annotations)?).map_err(|e| format!("{}: {e}", annotations.display()))?,
    );
    let mut pairs = Vec::new();
    let mut query_ids = BTreeSet::new();
    for path in results {
        let (qid, rows) = read_results_tsv(open(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
        let qid = qid.unwrap_or_else(|| file_stem(path));
        pairs.extend(rows.iter().map(|r| EvalPair::from_row(&qid, r)));
        query_ids.insert(qid);
    }
    let sources: BTreeSet<String> = db.patch_meta().iter().map(|m| m.source_protein_id.clone()).collect();
    let mut proteins: Vec<Protein> = Vec::new();
    for path in structures {
        proteins.push(read_structure(path)?.protein);
    }
    let identities = StructuralIdentities::new(proteins, *db.params(), match_options(c));
    let query_ids: Vec<String> = query_ids.into_iter().collect();
    let sources: Vec<String> = sources.into_iter().collect();
    let report = sweep(&pairs, &query_ids, &sources, ec, &annotations, &identities, Execution::default())
        .map_err(|e| e.to_string())?;
    if !report.missing_sources.is_empty() {
        let dropped = report.rows.first().map_or(0, |r| r.dropped);
        eprintln!(
            "warning: no structure for {}; {dropped} result pairs dropped",
            report.missing_sources.join(", ")
        );
    }
    match out {
        Some(path) => write_atomic(path, |w| report.write_tsv(w)).map_err(|e| e.to_string())?,
        None => report
            .write_tsv(&mut std::io::stdout().lock())
            .map_err(|e| e.to_string())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn scratch(c: &Config) -> Result<tempfile::TempDir, String> {
    let root = c.tmp.clone().unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&root).map_err(|e| format!("{}: {e}", root.display()))?;
    tempfile::Builder::new()
        .prefix("oracle-")
        .tempdir_in(&root)
        .map_err(|e| format!("{}: {e}", root.display()))
}

fn disk_bytes(db: &PatchDatabase) -> u64 {
    db.grid()
        .runs()
        .iter()
        .filter_map(|r| std::fs::metadata(db.dir().join(&r.file)).ok())
        .map(|m| m.len())
        .sum()
}

fn oracle_per_residue(c: &Config, seed: u64, sizes: &InstanceSizes) -> CmdResult {
    let mut rng = synth::rng(seed);
    let mut inst = synth::random_instance(&mut rng, sizes);
    if c.explicit_grid.0 || c.explicit_grid.1 {
        inst.params = GridParams::new(c.delta, c.bits_per_axis).map_err(|e| e.to_string())?;
    }
    let work = scratch(c)?;
    let t0 = Instant::now();
    let (db, _) = PatchDatabase::build(&work.path().join("db"), &inst.patches, inst.params, &build_options(c))
        .map_err(|e| e.to_string())?;
    let built = t0.elapsed();
    let opts = MatchOptions {
        tmp_dir: Some(work.path().to_path_buf()),
        ..match_options(c)
    };
    let engine = match_query(&inst.query, &db, c.tau_pp, &opts).map_err(|e| e.to_string())?;
    let engine_time = t0.elapsed();
    let t1 = Instant::now();
    let naive = naive_match(&inst.query, &inst.patches, &inst.params, FrameMode::PerResidue, c.tau_pp, &NaiveCaps::default())
        .map_err(|e| e.to_string())?;
    let naive_time = t1.elapsed();
    let oracle = naive.match_results();
    let pass = engine.results == oracle && engine.results.iter().zip(&oracle).all(|(a, b)| a.score.to_bits() == b.score.to_bits());

    println!("seed\t{seed}");
    println!(
        "instance\tquery {} residues / {} atoms, {} patches, delta {}",
        inst.query.residue_count,
        inst.query.atoms.len(),
        inst.patches.len(),
        inst.params.delta
    );
    println!("tau_pp\t{}", c.tau_pp);
    println!(
        "engine\t{} results, {:.3} ms (build {:.3} ms), {} entries in {} cells, {} bytes on disk",
        engine.results.len(),
        engine_time.as_secs_f64() * 1e3,
        built.as_secs_f64() * 1e3,
        db.grid().total_entries(),
        db.grid().stored_cells(),
        disk_bytes(&db)
    );
    println!(
        "oracle\t{} results, {:.3} ms, {} entries in memory",
        oracle.len(),
        naive_time.as_secs_f64() * 1e3,
        naive.stored_entries
    );
    if pass {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::FAILURE)
    }
}

/// Enumerates every ordered triple of an `atoms`-atom query and checks that
/// each per-residue engine match is dominated by a triple-frame match.
fn oracle_all_triples(c: &Config, seed: u64, atoms: usize, cap: usize) -> CmdResult {
    let caps = NaiveCaps {
        max_triple_atoms: cap,
        ..NaiveCaps::default()
    };
    let mut rng = synth::rng(seed);
    let mut query = synth::random_protein(&mut rng, "QRY0", atoms.div_ceil(4).max(1));
    query.atoms.truncate(atoms);
    let query = Protein::new(query.protein_id, query.atoms);
    if query.atoms.len() < atoms {
        return Err(format!("could only generate {} atoms", query.atoms.len()));
    }
    let params = GridParams::new(c.delta, c.bits_per_axis).map_err(|e| e.to_string())?;
    let n = query.atoms.len();
    let mut patches = vec![Patch {
        patch_id: "QRY0_0".into(),
        ..Patch::from_protein(&query, PatchOrigin::SiteRecord)
    }];
    let other = synth::random_protein(&mut rng, "OTHR", 3);
    patches.push(Patch::from_protein(&other, PatchOrigin::SiteRecord));

    let t1 = Instant::now();
    let naive = naive_match(&query, &patches, &params, FrameMode::AllTriples, c.tau_pp, &caps).map_err(|e| e.to_string())?;
    let naive_time = t1.elapsed();

    let work = scratch(c)?;
    let t0 = Instant::now();
    let (db, _) =
        PatchDatabase::build(&work.path().join("db"), &patches, params, &build_options(c)).map_err(|e| e.to_string())?;
    let opts = MatchOptions {
        tmp_dir: Some(work.path().to_path_buf()),
        ..match_options(c)
    };
    let engine = match_query(&query, &db, c.tau_pp, &opts).map_err(|e| e.to_string())?;
    let engine_time = t0.elapsed();

    let best = |patch: &str| {
        naive
            .matches
            .iter()
            .filter(|m| m.patch_id == patch)
            .map(|m| m.score)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let pass = engine.results.iter().all(|r| best(&r.patch_id) >= r.score);
    let ordered = n * n.saturating_sub(1) * n.saturating_sub(2);

    println!("seed\t{seed}");
    println!("query atoms\t{n}");
    println!("tau_pp\t{}", c.tau_pp);
    println!(
        "all-triples frames\t{} (n(n-1)(n-2) = {ordered}, collinear skipped {})",
        naive.query_frames,
        ordered - naive.query_frames
    );
    println!(
        "oracle\t{} matches, {:.3} ms, {} entries in memory",
        naive.matches.len(),
        naive_time.as_secs_f64() * 1e3,
        naive.stored_entries
    );
    println!(
        "engine\t{} results, {:.3} ms, {} entries on disk ({} bytes)",
        engine.results.len(),
        engine_time.as_secs_f64() * 1e3,
        db.grid().total_entries(),
        disk_bytes(&db)
    );
    if pass {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::FAILURE)
    }
}
