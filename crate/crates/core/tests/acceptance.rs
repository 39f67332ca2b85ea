//! Acceptance criteria. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::net::Ipv4Addr;
use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{cli_ok, fixture, has_dotted_quad, sha256_oracle};
use s7ttl::analysis::{
    analyze, average_ttl_by_model, category_counts, classify, port_distribution, provider_distribution,
    reconstruct_from, reconstruct_ttl, Category, CompareMode, ComparisonOutcome, ProbeNumbers, ProviderRules, VerdictKind,
};
use s7ttl::files::{read_ndjson_file, strip_timestamps, write_ndjson_file, FileHeader};
use s7ttl::fingerprint::{builtin_set, FingerprintKind};
use s7ttl::ingest::{deduplicate, parse_export, DeviceRecord, HardwareModel};
use s7ttl::netsim::{
    build_topology, generate_population, write_topology, PopulationMix, PopulationParams, SimHost, TopologySpec,
};
use s7ttl::probe::{probe_batch, ProbeErrorKind, ProbeOptions, ProbeOutcome};
use s7ttl::report::{hash_address, AnonymizedRecord};

type DeviceRow = (String, String, u8);
type Criterion = (u8, &'static str, Duration, fn() -> String);

/// TTLs of the reference hardware and OS defaults, read from the fixtures
/// rather than from the crate.
fn fixture_ttls() -> (Vec<DeviceRow>, Vec<(String, u8)>) {
    let devices = fs::read_to_string(fixture("table1.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect();
    let os = fs::read_to_string(fixture("os_defaults.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (name, ttl) = l.split_once(',').unwrap();
            (name.to_string(), ttl.parse().unwrap())
        })
        .collect();
    (devices, os)
}

fn five_ttl_population(count: usize, asymmetry: std::ops::RangeInclusive<i16>, seed: u64) -> TopologySpec {
    let set = builtin_set();
    let shares = [("ET200S", 0.2), ("S7-300", 0.2), ("Linux", 0.2), ("Windows", 0.2), ("S7-1500", 0.2)];
    generate_population(&PopulationParams {
        count,
        mix: PopulationMix::from_shares(&set, &shares).unwrap(),
        depth: 1..=60,
        asymmetry,
        seed,
    })
    .unwrap()
}

fn probe_spec(spec: &TopologySpec, opts: &ProbeOptions) -> Vec<ProbeOutcome> {
    let net = build_topology(spec).unwrap();
    let targets: Vec<Ipv4Addr> = spec.hosts.iter().map(|h| h.address).collect();
    probe_batch(&targets, &net, opts).unwrap()
}

fn truth_kind(host: &SimHost) -> VerdictKind {
    if host.is_honeypot_truth {
        VerdictKind::Honeypot
    } else {
        VerdictKind::Device
    }
}

fn criterion_1() -> String {
    let (devices, os) = fixture_ttls();
    let set = builtin_set();
    let got_devices: Vec<(String, String, u8)> = set
        .entries()
        .iter()
        .filter(|f| f.kind == FingerprintKind::Device)
        .map(|f| (f.range.clone().unwrap_or_default(), f.label.clone(), f.ttl))
        .collect();
    let got_os: Vec<(String, u8)> = set
        .entries()
        .iter()
        .filter(|f| f.kind == FingerprintKind::OperatingSystem)
        .map(|f| (f.label.clone(), f.ttl))
        .collect();
    assert_eq!(got_devices, devices);
    assert_eq!(got_os, os);
    assert_eq!(got_devices.iter().map(|d| d.2).collect::<Vec<_>>(), vec![30, 60, 30, 30, 30, 255]);
    format!("{} device rows + {} OS defaults equal the checked-in table", devices.len(), os.len())
}

fn criterion_2() -> String {
    let spec = five_ttl_population(500, 0..=0, 2024);
    let outcomes = probe_spec(&spec, &ProbeOptions::default());
    let mut ttls = BTreeSet::new();
    let mut depths = BTreeSet::new();
    for (host, out) in spec.hosts.iter().zip(&outcomes) {
        let (ping, trace) = (out.ping.expect("ping"), out.trace.as_ref().expect("trace"));
        // independent model of the path: one decrement per return-path router
        assert_eq!(i32::from(ping.reply_ttl), i32::from(host.original_ttl) - (i32::from(host.return_depth) - 1));
        assert_eq!(trace.hop_count, host.forward_depth);
        assert_eq!(reconstruct_ttl(&ping, trace).value, u16::from(host.original_ttl), "{host:?}");
        ttls.insert(host.original_ttl);
        depths.insert(host.forward_depth);
    }
    assert_eq!(ttls, BTreeSet::from([30, 60, 64, 128, 255]));
    assert!(*depths.first().unwrap() == 1 && *depths.last().unwrap() == 60);
    format!("500/500 hosts recovered exactly; depths {}..={}", depths.first().unwrap(), depths.last().unwrap())
}

fn classification_accuracy(spec: &TopologySpec) -> usize {
    let set = builtin_set();
    let outcomes = probe_spec(spec, &ProbeOptions::default());
    spec.hosts
        .iter()
        .zip(&outcomes)
        .filter(|(host, out)| {
            let r = reconstruct_ttl(out.ping.as_ref().unwrap(), out.trace.as_ref().unwrap());
            classify(r, &set).kind == truth_kind(host)
        })
        .count()
}

fn criterion_3() -> String {
    let symmetric = classification_accuracy(&five_ttl_population(500, 0..=0, 2024));
    assert_eq!(symmetric, 500);
    let skewed_spec = five_ttl_population(500, -1..=1, 2025);
    assert!(skewed_spec.hosts.iter().any(|h| h.asymmetry() != 0));
    let skewed = classification_accuracy(&skewed_spec);
    assert_eq!(skewed, 500);

    // exhaustive sweep: every original TTL against asymmetries -3..=3
    let set = builtin_set();
    let (devices, os) = fixture_ttls();
    let mut truth: BTreeMap<u8, VerdictKind> = BTreeMap::new();
    truth.extend(devices.iter().map(|d| (d.2, VerdictKind::Device)));
    truth.extend(os.iter().map(|o| (o.1, VerdictKind::Honeypot)));
    let verdict_at = |v: i32| {
        let r = if v <= 255 { reconstruct_from(v as u8, 1) } else { reconstruct_from(255, (v - 254) as u8) };
        classify(r, &set).kind
    };
    let mut changed_per_asym = BTreeMap::new();
    let mut first_tie = None;
    let mut first_wrong = None;
    for a in -3i16..=3 {
        let mut changed = 0;
        for ttl in 1u8..=255 {
            let value = i32::from(ttl) - i32::from(a);
            if value < 1 {
                continue;
            }
            let shifted = verdict_at(value);
            if shifted != verdict_at(i32::from(ttl)) {
                changed += 1;
            }
            if let Some(&expect) = truth.get(&ttl) {
                if shifted == VerdictKind::Inconclusive {
                    first_tie = Some(first_tie.map_or(a.abs(), |m: i16| m.min(a.abs())));
                } else if shifted != expect {
                    first_wrong = Some(first_wrong.map_or(a.abs(), |m: i16| m.min(a.abs())));
                }
            }
        }
        changed_per_asym.insert(a, changed);
    }
    // smallest gap between a device TTL and an OS TTL, from the fixture table
    let gap = devices.iter().flat_map(|d| os.iter().map(move |o| (i16::from(d.2) - i16::from(o.1)).abs())).min().unwrap();
    assert_eq!(gap, 4);
    assert_eq!(first_tie, Some(gap / 2), "ties begin at half the gap");
    assert_eq!(first_wrong, Some(gap / 2 + 1), "misclassification begins just past half the gap");
    format!(
        "500/500 symmetric, 500/500 at |asym|<=1; sweep: tie from |asym|={}, misclassified from |asym|={}; verdict changes per asym {:?}",
        first_tie.unwrap(),
        first_wrong.unwrap(),
        changed_per_asym
    )
}

fn criterion_4() -> String {
    let set = builtin_set();
    let spec = generate_population(&PopulationParams {
        count: 200,
        mix: PopulationMix::from_shares(&set, &[("S7-1500", 0.5), ("Windows", 0.5)]).unwrap(),
        depth: 1..=60,
        asymmetry: 0..=0,
        seed: 30,
    })
    .unwrap();
    let deep: usize = spec.hosts.iter().filter(|h| h.forward_depth > 30).count();
    assert!(deep > 0 && deep < spec.hosts.len());

    let capped = probe_spec(&spec, &ProbeOptions { max_hops: 30, ..ProbeOptions::default() });
    for (host, out) in spec.hosts.iter().zip(&capped) {
        let expect = (host.forward_depth > 30).then_some(ProbeErrorKind::TraceFailed);
        assert_eq!(out.error, expect, "{host:?}");
    }
    let max_hop = capped.iter().filter_map(|o| o.trace.as_ref()).map(|t| t.hop_count).max().unwrap();
    assert!(max_hop <= 30);
    let full = probe_spec(&spec, &ProbeOptions { max_hops: 64, ..ProbeOptions::default() });
    assert!(full.iter().all(|o| o.error.is_none()));
    format!("{deep}/200 hosts beyond 30 hops: TraceFailed at max_hops 30, all succeed at 64")
}

fn criterion_5() -> String {
    let mut hosts = Vec::new();
    let addr = |i: usize| Ipv4Addr::new(198, 18, 1, i as u8 + 1);
    for i in 0..30 {
        let ttl = [30, 60, 64, 128, 255][i % 5];
        let mut h = SimHost::new(addr(i), ttl, 5 + (i % 7) as u8);
        h.is_honeypot_truth = matches!(ttl, 64 | 128);
        match i {
            0..=11 => {
                // responsive; two of them only over one transport
                h.drops_icmp = i == 10;
                h.drops_udp = i == 11;
            }
            12..=17 => h.ignores_ping = true,
            18..=22 => h.ignores_trace = true,
            _ => {
                h.drops_icmp = true;
                h.drops_udp = true;
            }
        }
        hosts.push(h);
    }
    let spec = TopologySpec { hosts, seed: 0 };
    let outcomes = probe_spec(&spec, &ProbeOptions::default());
    let mut kinds: BTreeMap<Option<ProbeErrorKind>, usize> = BTreeMap::new();
    for o in &outcomes {
        *kinds.entry(o.error).or_default() += 1;
    }
    let expect = BTreeMap::from([
        (None, 12),
        (Some(ProbeErrorKind::PingFailed), 6),
        (Some(ProbeErrorKind::TraceFailed), 5),
        (Some(ProbeErrorKind::BothFailed), 7),
    ]);
    assert_eq!(kinds, expect);

    let records: Vec<DeviceRecord> = spec
        .hosts
        .iter()
        .map(|h| {
            let r = DeviceRecord::new(h.address, 102, "6ES7", "").unwrap();
            if h.is_honeypot_truth { r.with_tags(["honeypot"]) } else { r }
        })
        .collect();
    let compared = analyze(&records, &outcomes, &builtin_set(), CompareMode::Standard).unwrap();
    let counts: BTreeMap<Category, usize> = category_counts(&compared).into_iter().collect();
    assert_eq!(counts[&Category::Error], 18);
    assert_eq!(counts[&Category::ConsensusDevice] + counts[&Category::ConsensusHoneypot], 12);
    assert_eq!(counts.values().sum::<usize>(), 30);
    assert!(compared.iter().filter(|c| c.category == Category::Error).all(|c| c.verdict.is_none()));
    "12 ok / 6 PingFailed / 5 TraceFailed / 7 BothFailed; 18 errors excluded, 12 consensus".into()
}

fn criterion_6() -> String {
    let gz = parse_export(File::open(fixture("shodan_export.ndjson.gz")).unwrap(), "6ES7").unwrap();
    let plain = parse_export(File::open(fixture("shodan_export.ndjson")).unwrap(), "6ES7").unwrap();
    assert_eq!(gz.lines, 25);
    assert_eq!((gz.records.len(), gz.skipped()), (23, 2));
    assert_eq!(gz, plain);

    // independent count of distinct addresses among parseable lines
    let text = fs::read_to_string(fixture("shodan_export.ndjson")).unwrap();
    let distinct: HashSet<String> = text
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .map(|v| v["ip_str"].as_str().unwrap().to_string())
        .collect();
    let (deduped, stats) = deduplicate(gz.records);
    assert_eq!(deduped.len(), distinct.len());
    assert_eq!((deduped.len(), stats.removed), (19, 4));
    "25 lines -> 23 records (2 corrupt) -> 19 unique, removed 4; gzip == plain".into()
}

fn outcome(category: Category, port: u16, org: &str) -> ComparisonOutcome {
    ComparisonOutcome {
        category,
        record: DeviceRecord::new(Ipv4Addr::new(192, 0, 2, 1), port, "6ES7", "").unwrap().with_org(org),
        verdict: None,
        probe_error: None,
        probe: ProbeNumbers::default(),
        anomalous: false,
    }
}

fn criterion_7() -> String {
    let ports = vec![
        outcome(Category::ConsensusHoneypot, 102, ""),
        outcome(Category::ConsensusDevice, 102, ""),
        outcome(Category::ConsensusHoneypot, 102, ""),
        outcome(Category::ConsensusDevice, 502, ""),
        outcome(Category::ContentionLocalDevice, 161, ""),
    ];
    let rows = port_distribution(&ports, &Category::CONSENSUS);
    assert_eq!(rows.iter().map(|r| (r.port, r.count, r.percentage)).collect::<Vec<_>>(), vec![(102, 3, 75.0), (502, 1, 25.0)]);

    let orgs = vec![
        outcome(Category::ContentionLocalHoneypot, 21, "DigitalOcean, LLC"),
        outcome(Category::ContentionLocalDevice, 21, "DIGITALOCEAN-ASN"),
        outcome(Category::ContentionLocalHoneypot, 102, "Linode, LLC"),
    ];
    let rows = provider_distribution(&orgs, &Category::CONTENTION, &ProviderRules::default());
    let got: Vec<(&str, usize, f64)> = rows.iter().map(|r| (r.provider.as_str(), r.count, r.percentage)).collect();
    assert_eq!(got, vec![("DigitalOcean", 2, 66.67), ("Linode Cloud", 1, 33.33)]);

    let set = builtin_set();
    let model = |vendor: &str, name: &str, ttl: u8| {
        let mut o = outcome(Category::ContentionLocalDevice, 102, "");
        o.record.hardware_models.insert(HardwareModel { vendor: vendor.into(), model: name.into() });
        o.verdict = Some(classify(reconstruct_from(ttl, 1), &set));
        o
    };
    let samples = vec![
        model("INSEVIS", "6ES7 315-2EH14-0AB0", 64),
        model("INSEVIS", "6ES7 315-2EH14-0AB0", 65),
        model("INSEVIS", "6ES7 315-2EH14-0AB0", 64),
        model("VIPA", "VIPA 315-4NE12-0110", 65),
    ];
    let rows = average_ttl_by_model(&samples);
    let three = (64.0 + 65.0 + 64.0) / 3.0;
    assert!((rows[0].mean_ttl - 64.33).abs() <= 0.01 && (rows[0].mean_ttl - three).abs() <= 0.01);
    assert!((rows[1].mean_ttl - 65.00).abs() <= 0.01);
    format!("ports 75.00/25.00, providers 66.67/33.33, means {:.2} and {:.2}", rows[0].mean_ttl, rows[1].mean_ttl)
}

fn write_records(path: &Path, records: &[DeviceRecord]) {
    let header = FileHeader::new("records", "fixture".into(), serde_json::Value::Null);
    write_ndjson_file(path, &header, records).unwrap();
}

fn criterion_8() -> String {
    assert_eq!(
        sha256_oracle(b"1.2.3.4"),
        "6694f83c9f476da31f5df6bcc520034e7e57d421d247b9d34f49edbfc84a764c"
    );
    let addrs: Vec<Ipv4Addr> = (0..100u32).map(|i| Ipv4Addr::from(i.wrapping_mul(2_654_435_761) | 0x0100_0000)).collect();
    for a in &addrs {
        assert_eq!(hash_address(&a.to_string(), None), sha256_oracle(a.to_string().as_bytes()));
    }

    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let hosts: Vec<SimHost> = addrs.iter().enumerate().map(|(i, a)| SimHost::new(*a, [60, 64][i % 2], 3)).collect();
    write_topology(&dir.path().join("topo.ndjson"), &TopologySpec { hosts, seed: 0 }, "fixture".into()).unwrap();
    let records: Vec<DeviceRecord> = addrs
        .iter()
        .map(|a| DeviceRecord::new(*a, 102, "6ES7", &format!("Module: 6ES7 315-2EH14-0AB0 via {a} gw 10.0.0.1")).unwrap())
        .collect();
    write_records(&dir.path().join("records.ndjson"), &records);
    cli_ok(&["probe", "--transport", "sim", "--topology", &d("topo.ndjson"), "--records", &d("records.ndjson"), "--out", &d("probes.ndjson")]);
    cli_ok(&["analyze", "--records", &d("records.ndjson"), "--probes", &d("probes.ndjson"), "--out-dir", &d("analysis")]);
    cli_ok(&["report", "--anonymize", "--results", &d("analysis/results.ndjson"), "--out-dir", &d("report")]);

    let mut scanned = 0;
    for entry in fs::read_dir(dir.path().join("report")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!has_dotted_quad(&text));
        scanned += 1;
    }
    let (_, anon) = read_ndjson_file::<AnonymizedRecord>(&dir.path().join("report/dataset.ndjson"), "anonymized").unwrap();
    let got: Vec<&str> = anon.iter().map(|a| a.address_hash.as_str()).collect();
    let want: Vec<String> = addrs.iter().map(|a| sha256_oracle(a.to_string().as_bytes())).collect();
    assert_eq!(got, want);
    assert_eq!(want.iter().collect::<HashSet<_>>().len(), 100);
    format!("100/100 digests match the independent SHA-256; {scanned} output files free of dotted quads")
}

fn criterion_9() -> String {
    let spec = five_ttl_population(500, -3..=3, 9);
    let outcomes = probe_spec(&spec, &ProbeOptions { max_hops: 30, ..ProbeOptions::default() });
    let records: Vec<DeviceRecord> = spec
        .hosts
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let r = DeviceRecord::new(h.address, 102, ["6ES7", "Technodrome"][i % 2], "").unwrap();
            if i % 3 == 0 { r.with_tags(["honeypot"]) } else { r }
        })
        .collect();
    for mode in [CompareMode::Standard, CompareMode::Strict] {
        let counts = category_counts(&analyze(&records, &outcomes, &builtin_set(), mode).unwrap());
        assert_eq!(counts.iter().map(|(_, n)| n).sum::<usize>(), 500);
    }
    "live-scan population counts depend on the live internet and are not reproduced; partition invariant holds (500 = sum of categories)".into()
}

fn run_sim_pipeline(root: &Path, seed: &str) {
    let d = |n: &str| root.join(n).to_string_lossy().into_owned();
    cli_ok(&[
        "sim", "generate", "--count", "300", "--mix", "device=0.6,os=0.4", "--depth", "1..45", "--asymmetry", "-2..2",
        "--seed", seed, "--tag-honeypots", "--out", &d("topology.ndjson"), "--records-out", &d("records.ndjson"),
    ]);
    cli_ok(&["probe", "--transport", "sim", "--topology", &d("topology.ndjson"), "--records", &d("records.ndjson"), "--max-hops", "30", "--out", &d("probes.ndjson")]);
    cli_ok(&["analyze", "--records", &d("records.ndjson"), "--probes", &d("probes.ndjson"), "--out-dir", &d("analysis")]);
    cli_ok(&["report", "--anonymize", "--results", &d("analysis/results.ndjson"), "--out-dir", &d("report")]);
}

fn tree(root: &Path) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, strip_timestamps(&fs::read_to_string(&path).unwrap()));
            }
        }
    }
    files
}

fn criterion_10() -> String {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_sim_pipeline(a.path(), "42");
    run_sim_pipeline(b.path(), "42");
    run_sim_pipeline(c.path(), "43");
    let (ta, tb, tc) = (tree(a.path()), tree(b.path()), tree(c.path()));
    assert_eq!(ta.len(), 13);
    for (name, body) in &ta {
        assert_eq!(Some(body), tb.get(name), "{name} differs between identical runs");
    }
    assert_ne!(ta["topology.ndjson"], tc["topology.ndjson"], "a different seed must change the population");
    format!("{} artifacts byte-identical across two seeded runs (timestamps excluded)", ta.len())
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 10] = [
        (1, "fingerprint fidelity", Duration::from_secs(1), criterion_1),
        (2, "reconstruction oracle", Duration::from_secs(5), criterion_2),
        (3, "classification oracle", Duration::from_secs(10), criterion_3),
        (4, "plateau behavior", Duration::from_secs(5), criterion_4),
        (5, "error taxonomy", Duration::from_secs(10), criterion_5),
        (6, "ingestion", Duration::from_secs(10), criterion_6),
        (7, "table reproduction", Duration::from_secs(10), criterion_7),
        (8, "anonymization", Duration::from_secs(10), criterion_8),
        (9, "explicit non-reproducibility", Duration::from_secs(10), criterion_9),
        (10, "end-to-end determinism", Duration::from_secs(30), criterion_10),
    ];
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(check);
        let elapsed = start.elapsed();
        let line = match result {
            Ok(detail) if elapsed <= budget => format!("PASS  {detail}"),
            Ok(_) => format!("FAIL  over time budget of {budget:?}"),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                format!("FAIL  {}", msg.replace('\n', " "))
            }
        };
        if line.starts_with("FAIL") {
            failed += 1;
        }
        println!("criterion {n:>2} {name:<30} {line} [{elapsed:.2?}]");
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
