//! Command-line surface. Each subcommand reads and writes artifact files so
//! stages can be rerun independently.
//!
//! Exit codes: 0 success, 2 usage, 3 missing input, 4 transport fault,
//! 5 Shodan quota or authentication, 1 anything else. Failures print one
//! `error[<class>]: <message>` line on stderr.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::net::Ipv4Addr;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{
    analyze, average_ttl_by_model, category_counts, port_distribution, provider_distribution, Category, CompareMode,
    ComparisonOutcome, ModelTtlRow, PortRow, ProviderRow, ProviderRules,
};
use crate::files::{self, config_digest, FileError, FileHeader};
use crate::fingerprint::{builtin_set, load_fingerprints, FingerprintSet};
use crate::ingest::{self, deduplicate, parse_export, ApiError, DeviceRecord};
use crate::netsim::{self, build_topology, generate_population, PopulationMix, PopulationParams};
use crate::probe::{self, ProbeMethod, ProbeOptions, ProbeOutcome, RawTransport, Transport, TransportFault};
use crate::report::{self, emit_category_summary, emit_sorted_ttl_series};

pub const RECORDS_KIND: &str = "records";
pub const PROBES_KIND: &str = "probes";
pub const RESULTS_KIND: &str = "results";

#[derive(Debug, Parser)]
#[command(name = "s7ttl", version, about = "TTL-based identification of S7 honeypots")]
pub struct RunConfig {
    /// Flat key=value file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Harvest records from the Shodan search API.
    Fetch(FetchArgs),
    /// Convert a Shodan export (NDJSON, optionally gzip) into a record file.
    Parse(ParseArgs),
    /// Merge record files and collapse duplicate addresses.
    Dedup(DedupArgs),
    /// Measure ping TTL and hop count for every record.
    Probe(ProbeArgs),
    /// Reconstruct TTLs, classify, compare with Shodan tags, emit tables.
    Analyze(AnalyzeArgs),
    /// Write the publishable dataset and plot-ready CSV series.
    Report(ReportArgs),
    /// Print the builtin fingerprint table in file format.
    Fingerprints(FingerprintsArgs),
    /// Simulated network tools.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Generate a seeded host population.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Search string; repeatable. Defaults to the four standard queries.
    #[arg(long = "query")]
    pub queries: Vec<String>,
    #[arg(long)]
    pub page_limit: Option<u32>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, env = ingest::API_KEY_ENV, hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Origin query recorded on banners that do not name one.
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Real,
    Sim,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "real")]
    pub transport: TransportKind,
    /// Topology file, required with `--transport sim`.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_hops: u8,
    #[arg(long, default_value_t = 2000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 1)]
    pub retries: u32,
    #[arg(long, value_delimiter = ',', default_value = "icmp,udp")]
    pub methods: Vec<ProbeMethod>,
    #[arg(long, default_value_t = 100)]
    pub delay_ms: u64,
    #[arg(long, default_value_t = 16)]
    pub concurrency: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replaces the builtin fingerprint table.
    #[arg(long)]
    pub fingerprints: Option<PathBuf>,
    /// Provider bucketing rules, `pattern,Provider` per line.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Count Inconclusive verdicts as Honeypot.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replace addresses with SHA-256 hashes.
    #[arg(long)]
    pub anonymize: bool,
    /// Prefix mixed into every hash. Never written to any output.
    #[arg(long)]
    pub salt: Option<String>,
}

#[derive(Debug, Args)]
pub struct FingerprintsArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Comma-separated `key=share` pairs; keys are `device`, `os`, a
    /// fingerprint label or a range name.
    #[arg(long, default_value = "device=0.5,os=0.5")]
    pub mix: String,
    /// Forward depth range, `A..B` or a single value.
    #[arg(long, default_value = "1..30")]
    pub depth: String,
    /// Return-minus-forward depth range, `A..B` or a single value.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub asymmetry: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub fingerprints: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a record file listing every generated host.
    #[arg(long)]
    pub records_out: Option<PathBuf>,
    /// Give generated honeypots Shodan's `honeypot` tag in the record file.
    #[arg(long)]
    pub tag_honeypots: bool,
    #[arg(long, default_value = "sim")]
    pub query: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    MissingInput,
    Transport,
    Auth,
    Quota,
    Input,
    Io,
    Network,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::MissingInput => 3,
            ErrorClass::Transport => 4,
            ErrorClass::Auth | ErrorClass::Quota => 5,
            ErrorClass::Input | ErrorClass::Io | ErrorClass::Network => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::MissingInput => "missing-input",
            ErrorClass::Transport => "transport",
            ErrorClass::Auth => "auth",
            ErrorClass::Quota => "quota",
            ErrorClass::Input => "input",
            ErrorClass::Io => "io",
            ErrorClass::Network => "network",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    fn new(class: ErrorClass, message: impl fmt::Display) -> Self {
        CliError {
            class,
            message: message.to_string().replace('\n', " "),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.class.name(), self.message)
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        let class = match &e {
            FileError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => ErrorClass::MissingInput,
            FileError::Io { .. } => ErrorClass::Io,
            FileError::Parse { .. } | FileError::WrongKind { .. } => ErrorClass::Input,
        };
        CliError::new(class, e)
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        let class = match &e {
            ApiError::Auth(_) => ErrorClass::Auth,
            ApiError::Quota(_) => ErrorClass::Quota,
            ApiError::Transient { .. } => ErrorClass::Network,
            ApiError::Cache { .. } => ErrorClass::Io,
        };
        CliError::new(class, e)
    }
}

impl From<TransportFault> for CliError {
    fn from(e: TransportFault) -> Self {
        CliError::new(ErrorClass::Transport, e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn require_input(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::new(ErrorClass::MissingInput, format!("{} does not exist", path.display())))
    }
}

fn io_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new(ErrorClass::Io, format!("{}: {e}", path.display()))
}

fn prepare_output(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| io_error(dir, e)),
        _ => Ok(()),
    }
}

fn prepare_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Digest of an artifact's body, ignoring its header line.
fn body_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let body = match bytes.iter().position(|b| *b == b'\n') {
        Some(end) if bytes.starts_with(b"{\"header\"") => &bytes[end + 1..],
        _ => &bytes[..],
    };
    Ok(hex::encode(Sha256::digest(body)))
}

fn read_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> CliResult<(Option<FileHeader>, Vec<T>)> {
    require_input(path)?;
    Ok(files::read_ndjson_file(path, kind)?)
}

fn write_artifact<T: Serialize>(path: &Path, header: &FileHeader, rows: &[T]) -> CliResult {
    prepare_output(path)?;
    Ok(files::write_ndjson_file(path, header, rows)?)
}

fn write_csv_file<F>(path: &Path, emit: F) -> CliResult
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), String>,
{
    let mut buf = Vec::new();
    emit(&mut buf).map_err(|e| io_error(path, e))?;
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

fn load_fingerprint_file(path: Option<&Path>) -> CliResult<FingerprintSet> {
    let Some(path) = path else { return Ok(builtin_set()) };
    require_input(path)?;
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    load_fingerprints(BufReader::new(file), &name)
        .map_err(|e| CliError::new(ErrorClass::Input, format!("{}: {e}", path.display())))
}

fn parse_range<T: FromStr + PartialOrd + Copy>(text: &str, what: &str) -> CliResult<RangeInclusive<T>> {
    let bad = || CliError::new(ErrorClass::Usage, format!("invalid {what} {text:?}, expected A..B or a single value"));
    let (lo, hi) = match text.split_once("..") {
        Some((a, b)) => (a.trim(), b.trim_start_matches('=').trim()),
        None => (text.trim(), text.trim()),
    };
    let lo: T = lo.parse().map_err(|_| bad())?;
    let hi: T = hi.parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

fn parse_mix(text: &str, set: &FingerprintSet) -> CliResult<PopulationMix> {
    let mut shares = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, share) = part
            .rsplit_once('=')
            .ok_or_else(|| CliError::new(ErrorClass::Usage, format!("mix entry {part:?} lacks '='")))?;
        let share: f64 = share
            .trim()
            .parse()
            .map_err(|_| CliError::new(ErrorClass::Usage, format!("mix share {share:?} is not a number")))?;
        shares.push((key.trim(), share));
    }
    PopulationMix::from_shares(set, &shares).map_err(|e| CliError::new(ErrorClass::Usage, e))
}

fn fetch(args: &FetchArgs, out: &mut dyn Write) -> CliResult {
    let key = args.api_key.as_deref().unwrap_or_default();
    if key.is_empty() {
        return Err(CliError::new(ErrorClass::Auth, format!("no API key; set {}", ingest::API_KEY_ENV)));
    }
    let queries: Vec<String> = if args.queries.is_empty() {
        ingest::default_queries().into_iter().map(String::from).collect()
    } else {
        args.queries.clone()
    };
    let mut records = Vec::new();
    for query in &queries {
        let rep = ingest::fetch_query(query, key, args.page_limit, args.cache_dir.as_deref())?;
        let _ = writeln!(
            out,
            "fetch {query:?}: {} records, {} pages fetched, {} from cache, {} malformed pages, {} banners skipped",
            rep.records.len(),
            rep.pages_fetched,
            rep.pages_from_cache,
            rep.malformed_pages,
            rep.skipped_banners
        );
        records.extend(rep.records);
    }
    let digest = config_digest(["fetch".to_string(), queries.join("\n"), format!("{:?}", args.page_limit)]);
    let header = FileHeader::new(RECORDS_KIND, digest, json!({ "queries": queries }));
    write_artifact(&args.out, &header, &records)
}

fn parse(args: &ParseArgs, out: &mut dyn Write) -> CliResult {
    require_input(&args.input)?;
    let file = File::open(&args.input).map_err(|e| io_error(&args.input, e))?;
    let rep = parse_export(file, &args.query).map_err(|e| CliError::new(ErrorClass::Input, e))?;
    let _ = writeln!(
        out,
        "parse: {} records from {} lines, skipped {} malformed, {} ipv6{}",
        rep.records.len(),
        rep.lines,
        rep.skipped_malformed,
        rep.skipped_ipv6,
        if rep.truncated { ", input truncated" } else { "" }
    );
    let digest = config_digest(["parse".to_string(), args.query.clone(), body_digest(&args.input)?]);
    let meta = json!({
        "origin_query": args.query,
        "lines": rep.lines,
        "skipped_malformed": rep.skipped_malformed,
        "skipped_ipv6": rep.skipped_ipv6,
        "truncated": rep.truncated,
    });
    write_artifact(&args.out, &FileHeader::new(RECORDS_KIND, digest, meta), &rep.records)
}

fn dedup(args: &DedupArgs, out: &mut dyn Write) -> CliResult {
    let mut all = Vec::new();
    let mut parts = vec!["dedup".to_string()];
    for input in &args.inputs {
        let (_, records) = read_artifact::<DeviceRecord>(input, RECORDS_KIND)?;
        parts.push(body_digest(input)?);
        all.extend(records);
    }
    let (records, stats) = deduplicate(all);
    let _ = writeln!(out, "dedup: {} in, {} out, {} removed", stats.total_in, stats.total_out, stats.removed);
    let header = FileHeader::new(RECORDS_KIND, config_digest(parts), json!({ "dedup": stats }));
    write_artifact(&args.out, &header, &records)
}

fn probe_options(args: &ProbeArgs) -> CliResult<ProbeOptions> {
    let opts = ProbeOptions {
        max_hops: args.max_hops,
        per_probe_timeout: Duration::from_millis(args.timeout_ms),
        retries_per_method: args.retries,
        methods: args.methods.clone(),
        inter_probe_delay: Duration::from_millis(args.delay_ms),
        concurrency_limit: args.concurrency,
    };
    opts.validate().map_err(|e| CliError::new(ErrorClass::Usage, e))?;
    Ok(opts)
}

fn run_probes(args: &ProbeArgs, out: &mut dyn Write) -> CliResult {
    let opts = probe_options(args)?;
    let (_, records) = read_artifact::<DeviceRecord>(&args.records, RECORDS_KIND)?;
    let targets: Vec<Ipv4Addr> = records.iter().map(|r| r.address).collect();
    let mut parts = vec![
        "probe".to_string(),
        body_digest(&args.records)?,
        files::to_sorted_json(&opts),
        format!("{:?}", args.transport),
    ];

    let transport: Box<dyn Transport> = match args.transport {
        TransportKind::Real => Box::new(RawTransport::new()?),
        TransportKind::Sim => {
            let path = args.topology.as_deref().ok_or_else(|| {
                CliError::new(ErrorClass::Usage, "--transport sim requires --topology <file>")
            })?;
            require_input(path)?;
            parts.push(body_digest(path)?);
            let spec = netsim::read_topology(path)?;
            Box::new(build_topology(&spec).map_err(|e| CliError::new(ErrorClass::Input, e))?)
        }
    };

    let progress = |done: usize, total: usize| {
        if done.is_multiple_of(100) || done == total {
            log::info!("probed {done}/{total}");
        }
    };
    let digest = config_digest(parts);
    let opts_meta = serde_json::to_value(&opts).expect("options serialize");
    match probe::probe_batch_with_progress(&targets, transport.as_ref(), &opts, progress) {
        Ok(outcomes) => {
            let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
            let _ = writeln!(out, "probe: {} targets, {failed} with errors", outcomes.len());
            let header = FileHeader::new(PROBES_KIND, digest, json!({ "options": opts_meta, "aborted": false }));
            write_artifact(&args.out, &header, &outcomes)
        }
        Err(abort) => {
            let partial: Vec<ProbeOutcome> = abort.partial.iter().flatten().cloned().collect();
            let header = FileHeader::new(
                PROBES_KIND,
                digest,
                json!({ "options": opts_meta, "aborted": true, "fault": abort.fault.to_string() }),
            );
            write_artifact(&args.out, &header, &partial)?;
            Err(CliError::new(
                ErrorClass::Transport,
                format!("{} ({} of {} targets saved)", abort.fault, partial.len(), targets.len()),
            ))
        }
    }
}

fn run_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> CliResult {
    let set = load_fingerprint_file(args.fingerprints.as_deref())?;
    let rules = match &args.rules {
        None => ProviderRules::default(),
        Some(path) => {
            require_input(path)?;
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            ProviderRules::load(BufReader::new(file))
                .map_err(|e| CliError::new(ErrorClass::Input, format!("{}: {e}", path.display())))?
        }
    };
    let (_, records) = read_artifact::<DeviceRecord>(&args.records, RECORDS_KIND)?;
    let (_, probes) = read_artifact::<ProbeOutcome>(&args.probes, PROBES_KIND)?;
    let mode = if args.strict { CompareMode::Strict } else { CompareMode::Standard };
    let outcomes = analyze(&records, &probes, &set, mode).map_err(|e| CliError::new(ErrorClass::Input, e))?;

    let counts = category_counts(&outcomes);
    let digest = config_digest([
        "analyze".to_string(),
        body_digest(&args.records)?,
        body_digest(&args.probes)?,
        set.to_file_format(),
        rules.to_file_format(),
        format!("{mode:?}"),
    ]);
    let counts_meta: serde_json::Map<String, serde_json::Value> =
        counts.iter().map(|(c, n)| (c.snake_name().to_string(), json!(n))).collect();
    let meta = json!({
        "strict_mode": args.strict,
        "fingerprints": set.provenance(),
        "categories": counts_meta,
        "anomalous": outcomes.iter().filter(|o| o.anomalous).count(),
    });
    prepare_dir(&args.out_dir)?;
    write_artifact(&args.out_dir.join("results.ndjson"), &FileHeader::new(RESULTS_KIND, digest, meta), &outcomes)?;

    for (name, filter) in [("consensus", &Category::CONSENSUS[..]), ("contention", &Category::CONTENTION[..])] {
        let ports = port_distribution(&outcomes, filter);
        write_csv_file(&args.out_dir.join(format!("ports_{name}.csv")), |b| {
            PortRow::write_csv(&ports, b).map_err(|e| e.to_string())
        })?;
        let providers = provider_distribution(&outcomes, filter, &rules);
        write_csv_file(&args.out_dir.join(format!("providers_{name}.csv")), |b| {
            ProviderRow::write_csv(&providers, b).map_err(|e| e.to_string())
        })?;
    }
    let models = average_ttl_by_model(&outcomes);
    write_csv_file(&args.out_dir.join("model_ttl.csv"), |b| {
        ModelTtlRow::write_csv(&models, b).map_err(|e| e.to_string())
    })?;

    let summary: Vec<String> = counts.iter().map(|(c, n)| format!("{c}={n}")).collect();
    let _ = writeln!(out, "analyze: {} hosts; {}", outcomes.len(), summary.join(" "));
    Ok(())
}

fn run_report(args: &ReportArgs, out: &mut dyn Write) -> CliResult {
    if args.salt.is_some() && !args.anonymize {
        return Err(CliError::new(ErrorClass::Usage, "--salt only applies with --anonymize"));
    }
    let (_, outcomes) = read_artifact::<ComparisonOutcome>(&args.results, RESULTS_KIND)?;
    prepare_dir(&args.out_dir)?;
    let salt = args.salt.as_deref();
    let digest = config_digest(["report".to_string(), body_digest(&args.results)?, args.anonymize.to_string()]);
    let dataset = args.out_dir.join("dataset.ndjson");
    if args.anonymize {
        let anon = report::anonymize(&outcomes, salt);
        let meta = json!({ "anonymized": true, "salted": salt.is_some() });
        write_artifact(&dataset, &FileHeader::new(report::ANONYMIZED_KIND, digest, meta), &anon)?;
    } else {
        write_artifact(&dataset, &FileHeader::new(RESULTS_KIND, digest, json!({ "anonymized": false })), &outcomes)?;
    }

    for (name, filter) in [("consensus", &Category::CONSENSUS[..]), ("contention", &Category::CONTENTION[..])] {
        let series = emit_sorted_ttl_series(&outcomes, filter);
        write_csv_file(&args.out_dir.join(format!("ttl_series_{name}.csv")), |b| {
            series.write_csv(b).map_err(|e| e.to_string())
        })?;
    }
    let mut summary = emit_category_summary(&outcomes);
    if args.anonymize {
        summary.rows = summary.rows.into_iter().map(|(q, row)| (report::redact_text(&q, salt), row)).collect();
    }
    write_csv_file(&args.out_dir.join("category_summary.csv"), |b| {
        summary.write_csv(b).map_err(|e| e.to_string())
    })?;
    let _ = writeln!(out, "report: {} outcomes written to {}", outcomes.len(), args.out_dir.display());
    Ok(())
}

fn run_fingerprints(args: &FingerprintsArgs, out: &mut dyn Write) -> CliResult {
    let text = builtin_set().to_file_format();
    match &args.out {
        Some(path) => {
            prepare_output(path)?;
            fs::write(path, text).map_err(|e| io_error(path, e))
        }
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::new(ErrorClass::Io, e)),
    }
}

fn run_generate(args: &GenerateArgs, out: &mut dyn Write) -> CliResult {
    let set = load_fingerprint_file(args.fingerprints.as_deref())?;
    let params = PopulationParams {
        count: args.count,
        mix: parse_mix(&args.mix, &set)?,
        depth: parse_range(&args.depth, "depth")?,
        asymmetry: parse_range(&args.asymmetry, "asymmetry")?,
        seed: args.seed,
    };
    let spec = generate_population(&params).map_err(|e| CliError::new(ErrorClass::Usage, e))?;
    let digest = config_digest([
        "sim generate".to_string(),
        args.count.to_string(),
        args.mix.clone(),
        args.depth.clone(),
        args.asymmetry.clone(),
        args.seed.to_string(),
        set.to_file_format(),
    ]);
    prepare_output(&args.out)?;
    netsim::write_topology(&args.out, &spec, digest.clone())?;

    if let Some(path) = &args.records_out {
        let records = spec
            .hosts
            .iter()
            .map(|h| {
                let banner = format!("simulated {}", h.model_label.as_deref().unwrap_or("host"));
                let record = DeviceRecord::new(h.address, 102, &args.query, &banner)
                    .map_err(|e| CliError::new(ErrorClass::Usage, e))?;
                let tagged = args.tag_honeypots && h.is_honeypot_truth;
                Ok(record.with_tags(tagged.then_some("honeypot")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let meta = json!({ "simulated": true, "tag_honeypots": args.tag_honeypots });
        write_artifact(path, &FileHeader::new(RECORDS_KIND, digest, meta), &records)?;
    }
    let honeypots = spec.hosts.iter().filter(|h| h.is_honeypot_truth).count();
    let _ = writeln!(out, "sim generate: {} hosts, {honeypots} honeypots, seed {}", spec.hosts.len(), spec.seed);
    Ok(())
}

/// Runs a parsed configuration, writing progress lines to `out`.
pub fn execute(config: &RunConfig, out: &mut dyn Write) -> CliResult {
    match &config.command {
        Command::Fetch(a) => fetch(a, out),
        Command::Parse(a) => parse(a, out),
        Command::Dedup(a) => dedup(a, out),
        Command::Probe(a) => run_probes(a, out),
        Command::Analyze(a) => run_analyze(a, out),
        Command::Report(a) => run_report(a, out),
        Command::Fingerprints(a) => run_fingerprints(a, out),
        Command::Sim(SimCommand::Generate(a)) => run_generate(a, out),
    }
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        let arg = arg.to_string_lossy();
        if arg == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            return Some(PathBuf::from(path));
        }
    }
    None
}

/// Appends `--key=value` for config file entries the command line did not
/// set. Keys are long flag names of the invoked subcommand; entries meant
/// for other subcommands are ignored.
fn apply_config_file(argv: Vec<OsString>, path: &Path) -> CliResult<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| {
        let class = if e.kind() == io::ErrorKind::NotFound { ErrorClass::MissingInput } else { ErrorClass::Io };
        CliError::new(class, format!("config {}: {e}", path.display()))
    })?;

    let root = RunConfig::command();
    let mut leaf = &root;
    let mut skip_value = false;
    for arg in argv.iter().skip(1) {
        let arg = arg.to_string_lossy();
        if skip_value {
            skip_value = false;
            continue;
        }
        if arg == "--config" {
            skip_value = true;
            continue;
        }
        if arg.starts_with('-') {
            continue;
        }
        match leaf.find_subcommand(arg.as_ref()) {
            Some(sub) => leaf = sub,
            None => break,
        }
    }

    let mut all_longs = Vec::new();
    collect_longs(&root, &mut all_longs);
    let present: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();

    let mut extra = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::new(ErrorClass::Usage, format!("config {} line {}: expected key=value", path.display(), idx + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if !all_longs.contains(&key) || key == "config" {
            return Err(CliError::new(
                ErrorClass::Usage,
                format!("config {} line {}: unknown key {key:?}", path.display(), idx + 1),
            ));
        }
        let Some(arg) = leaf.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            continue;
        };
        if present.contains(&key) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(OsString::from(format!("--{key}={value}")));
        } else if matches!(value.to_ascii_lowercase().as_str(), "true" | "yes" | "1" | "on") {
            extra.push(OsString::from(format!("--{key}")));
        }
    }
    let mut argv = argv;
    argv.extend(extra);
    Ok(argv)
}

fn collect_longs(cmd: &clap::Command, out: &mut Vec<String>) {
    out.extend(cmd.get_arguments().filter_map(|a| a.get_long()).map(String::from));
    for sub in cmd.get_subcommands() {
        collect_longs(sub, out);
    }
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Some(path) = config_path(&argv) {
        match apply_config_file(argv, &path) {
            Ok(a) => argv = a,
            Err(e) => {
                let _ = writeln!(err, "{e}");
                return e.class.exit_code();
            }
        }
    }
    let config = match RunConfig::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{}", e.render());
                let first = e.to_string();
                let first = first.lines().next().unwrap_or_default().trim_start_matches("error: ");
                let _ = writeln!(err, "error[usage]: {first}");
            }
            return code;
        }
    };
    match execute(&config, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.class.exit_code()
        }
    }
}
