//! Acceptance gate: every criterion runs at its stated tolerance and
//! prints one PASS/FAIL line. Exits nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use prefdetect::allocation::{offline_replay, simulate_power, AllocationPolicy, ReplayOptions};
use prefdetect::cli;
use prefdetect::data::{Dataset, Format, JudgmentRecord, Outcome, PairAggregate, PairKey};
use prefdetect::dependence::{cluster_robust_ratio, inflated_sample_size};
use prefdetect::detect::{detectability_curve, CurveOptions};
use prefdetect::planner::{pilot_assess, Verdict, LOW_SIGNAL_THRESHOLD};
use prefdetect::rng;
use prefdetect::scenario::Scenario;
use prefdetect::stats::{bernoulli_kl, budget_constant, kl_budget, llr_test, required_sample_size, TestConfig};

type Check = Result<String, String>;

fn golden(n: u64, expected: u64) -> bool {
    let tol = (0.02 * expected as f64).max(2.0);
    (n as f64 - expected as f64).abs() <= tol
}

fn cfg(alpha: f64) -> TestConfig {
    TestConfig::new(alpha, 0.9).unwrap()
}

fn check(ok: bool, detail: String) -> Check {
    if ok { Ok(detail) } else { Err(detail) }
}

fn c1_constant() -> Check {
    let c = budget_constant(&cfg(0.05));
    let via_n = required_sample_size(0.01, &cfg(0.05)).unwrap() as f64 * 1e-4;
    check(
        (2.625..=2.63).contains(&c) && (2.625..=2.6301).contains(&via_n),
        format!("constant {c:.6}, n(0.01) * 0.01^2 = {via_n:.4}"),
    )
}

fn c2_margin_budgets() -> Check {
    let deltas = [0.082, 0.190, 0.321, 0.047, 0.187, 0.285];
    let n05 = [395, 73, 26, 1175, 75, 32];
    let n01 = [560, 103, 36, 1664, 106, 46];
    let mut ok = true;
    let mut detail = Vec::new();
    for i in 0..deltas.len() {
        let a = required_sample_size(deltas[i], &cfg(0.05)).unwrap();
        let b = required_sample_size(deltas[i], &cfg(0.01)).unwrap();
        ok &= golden(a, n05[i]) && golden(b, n01[i]);
        detail.push(format!("{}:{a}/{b}", deltas[i]));
    }
    check(ok, detail.join(" "))
}

fn c3_near_tie_budgets() -> Check {
    let a = required_sample_size(0.072, &cfg(0.05)).unwrap();
    let b = required_sample_size(0.037, &cfg(0.05)).unwrap();
    let ok = a.abs_diff(506) <= 2 && (b as f64 - 1878.0).abs() <= 0.05 * 1878.0;
    check(ok, format!("0.072 -> {a} (506 +/- 2), 0.037 -> {b} (1878 +/- 5%)"))
}

fn c4_worked_example() -> Check {
    let pilot = PairAggregate::from_counts(PairKey::new("a", "b").unwrap(), 22, 28, 0);
    let r = pilot_assess(&pilot, &cfg(0.05), 500, LOW_SIGNAL_THRESHOLD).unwrap();
    let n = r.required_n.unwrap();
    check(
        golden(n, 731) && r.verdict == Verdict::Underpowered,
        format!("required_n {n} (731 +/- 2), verdict {}", r.verdict),
    )
}

fn c5_icc_inflation() -> Check {
    let cell = |n0, rho| inflated_sample_size(n0, rho).unwrap();
    let close = |x: Option<f64>, y: f64| x.is_some_and(|x| (x - y).abs() < 0.001);
    let a = cell(26, 0.0001);
    let b = cell(26, 0.001);
    let c = cell(1051, 0.0001);
    let d = cell(1051, 0.001);
    let e = cell(26, 0.01);
    let ok = close(a.inflation, 1.002)
        && a.n_inflated == Some(26)
        && close(b.inflation, 1.025)
        && b.n_inflated == Some(26)
        && close(c.inflation, 1.117)
        && c.n_inflated == Some(1174)
        && !d.is_feasible()
        && e.n_inflated.is_some_and(|n| (34..=35).contains(&n))
        && e.inflation.is_some_and(|x| (x - 1.329).abs() <= 0.02 * 1.329);
    check(
        ok,
        format!(
            "{:.4}/{:?} {:.4}/{:?} {:.4}/{:?} feasible={} {:.4}/{:?}",
            a.inflation.unwrap_or(f64::NAN),
            a.n_inflated,
            b.inflation.unwrap_or(f64::NAN),
            b.n_inflated,
            c.inflation.unwrap_or(f64::NAN),
            c.n_inflated,
            d.is_feasible(),
            e.inflation.unwrap_or(f64::NAN),
            e.n_inflated
        ),
    )
}

fn c6_kl_bounds() -> Check {
    let points = 10_000;
    let mut violations = 0;
    for i in 0..points {
        let d = -0.25 + 0.5 * i as f64 / (points - 1) as f64;
        let kl = bernoulli_kl(d).unwrap();
        if kl < 2.0 * d * d - 1e-15 || kl > 2.25 * d * d + 1e-15 {
            violations += 1;
        }
    }
    check(violations == 0, format!("{violations} violations over {points} grid points"))
}

fn pool(second: u64, first: u64) -> PairAggregate {
    PairAggregate::from_counts(PairKey::new("a", "b").unwrap(), first, second, 0)
}

fn c7_power_calibration() -> Check {
    let mut ok = true;
    let mut detail = Vec::new();
    for (delta, second, first) in [(0.05, 55, 45), (0.1, 60, 40), (0.2, 70, 30)] {
        let n = required_sample_size(delta, &cfg(0.05)).unwrap();
        let mut opts = CurveOptions::new(7);
        opts.trials = 10_000;
        let p = detectability_curve(&pool(second, first), &[n], &opts).unwrap().power[0];
        ok &= (0.87..=0.93).contains(&p);
        detail.push(format!("delta {delta} n {n}: {p:.4}"));
    }
    check(ok, detail.join(", "))
}

fn c8_null_calibration() -> Check {
    let mut opts = CurveOptions::new(8);
    opts.trials = 10_000;
    let p = detectability_curve(&pool(50, 50), &[200], &opts).unwrap().power[0];
    check((0.035..=0.065).contains(&p), format!("rejection rate {p:.4} at n 200"))
}

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    Scenario::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn regime_power(s: &Scenario, budget: u64) -> (f64, f64) {
    let model = s.model().unwrap();
    let seed = s.seed.unwrap_or(0);
    let prop = simulate_power(&model, &AllocationPolicy::Proportional, budget, s.alpha, s.trials, seed).unwrap();
    let two = simulate_power(&model, &s.two_stage_policy(), budget, s.alpha, s.trials, seed).unwrap();
    (prop.power, two.power)
}

fn c9_regime_ordering() -> Check {
    let c = scenario("concentrated.cfg");
    let d = scenario("diffuse.cfg");
    let (cp, ct) = regime_power(&c, 2000);
    let (dp, dt) = regime_power(&d, 2000);
    check(
        ct >= cp + 0.05 && dp >= dt - 0.02 && c.trials == 2000 && d.trials == 2000,
        format!("concentrated two-stage {ct:.3} vs proportional {cp:.3}; diffuse proportional {dp:.3} vs two-stage {dt:.3}"),
    )
}

fn c10_signal_mass() -> Check {
    let d = scenario("diffuse.cfg");
    let policy = d.two_stage_policy();
    let q = match policy {
        AllocationPolicy::TwoStage { q, .. } => q,
        AllocationPolicy::Proportional => unreachable!(),
    };
    let est = simulate_power(&d.model().unwrap(), &policy, 2000, d.alpha, 1000, 10).unwrap();
    let mass = est.signal_mass_mean.unwrap();
    check((mass - q).abs() <= 0.05, format!("mean signal mass {mass:.4} vs q {q}"))
}

fn c11_llr_bound() -> Check {
    let pattern = [0.05, 0.1, 0.2, -0.15];
    let streams = 100_000;
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [1.0f64, 2.0, 4.0] {
        let mut deltas = Vec::new();
        while kl_budget(&deltas).unwrap().total_kl < k {
            deltas.push(pattern[deltas.len() % pattern.len()]);
        }
        let kl = kl_budget(&deltas).unwrap().total_kl;
        let mut rejections = 0usize;
        let mut ys = vec![false; deltas.len()];
        for s in 0..streams {
            let mut g = rng::stream(11, &[k.to_bits(), s as u64]);
            for y in ys.iter_mut() {
                *y = g.random_bool(0.5);
            }
            if llr_test(&ys, &deltas, k).unwrap().reject {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / streams as f64;
        let bound = (-k / 2.0).exp();
        let se = (bound * (1.0 - bound) / streams as f64).sqrt();
        ok &= rate <= bound + 3.0 * se;
        detail.push(format!("K {k} (stream KL {kl:.3}, {} judgments): {rate:.4} <= {bound:.4}", deltas.len()));
    }
    check(ok, detail.join(", "))
}

fn c12_replay_equivalence() -> Check {
    let delta = 0.1;
    let budget = 250;
    let mut g = rng::stream(12, &[]);
    let records: Vec<JudgmentRecord> = (0..20_000)
        .map(|i| {
            let o = if g.random_bool(0.5 + delta) { Outcome::BWins } else { Outcome::AWins };
            JudgmentRecord::new("a", "b", format!("q{i}"), o).with_prompt_type("all")
        })
        .collect();
    let ds = Dataset::from_records(records).unwrap();
    let pair = PairKey::new("a", "b").unwrap();
    let opts = ReplayOptions { trials: 2000, ..ReplayOptions::new(12) };
    let replay = offline_replay(&ds, &pair, &AllocationPolicy::Proportional, budget, &opts).unwrap();
    let model = prefdetect::allocation::PromptTypeModel::uniform(vec![delta]).unwrap();
    let sim = simulate_power(&model, &AllocationPolicy::Proportional, budget, 0.05, 2000, 12).unwrap();
    check(
        (replay.power - sim.power).abs() <= 0.05,
        format!("replay {:.4} vs simulate {:.4} at B {budget}", replay.power, sim.power),
    )
}

fn c13_singleton_clusters() -> Check {
    let mut g = rng::stream(13, &[]);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for rep in 0..200 {
        let n = g.random_range(2..600);
        let records: Vec<JudgmentRecord> = (0..n)
            .map(|i| {
                let o = if g.random_bool(0.45) { Outcome::BWins } else { Outcome::AWins };
                JudgmentRecord::new("a", "b", format!("{rep}-{i}"), o)
            })
            .collect();
        let ds = Dataset::from_records(records).unwrap();
        if let Ok(r) = cluster_robust_ratio(&ds.aggregate(&PairKey::new("a", "b").unwrap())) {
            worst = worst.max((r - 1.0).abs());
            checked += 1;
        }
    }
    check(worst == 0.0 && checked > 150, format!("{checked} datasets, max |ratio - 1| = {worst:e}"))
}

fn synthetic_dataset(path: &Path) {
    let mut g = rng::stream(14, &[]);
    let models = ["alpha", "beta", "gamma", "delta"];
    let types = ["code", "math", "chat", "write"];
    let mut records = Vec::new();
    for i in 0..4000u32 {
        let a = g.random_range(0..models.len());
        let b = (a + 1 + g.random_range(0..models.len() - 1)) % models.len();
        let t = g.random_range(0..types.len());
        let p = 0.5 + 0.04 * (b as f64 - a as f64) + if t == 0 { 0.1 } else { 0.0 };
        let u: f64 = g.random();
        let outcome = if u < 0.1 {
            Outcome::Tie
        } else if u < 0.1 + 0.9 * p {
            Outcome::BWins
        } else {
            Outcome::AWins
        };
        records.push(
            JudgmentRecord::new(models[a], models[b], format!("p{}", i % 1500), outcome)
                .with_prompt_type(types[t])
                .with_timestamp(f64::from(i)),
        );
    }
    let ds = Dataset::from_records(records).unwrap();
    ds.write(std::fs::File::create(path).unwrap(), Format::Csv).unwrap();
}

fn run_cli(args: &[String]) -> (i32, Vec<u8>) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(std::iter::once("prefdetect".to_string()).chain(args.iter().cloned()), &mut out, &mut err);
    (code, out)
}

fn c14_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("judgments.csv");
    synthetic_dataset(&data);
    let scen = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join("concentrated.cfg");
    let s = |p: &Path| p.display().to_string();
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("detect", vec!["detect".into(), "--trials".into(), "300".into(), "--z-budget".into(), "100".into()]),
        ("simulate", vec!["simulate".into(), "--scenario".into(), s(&scen)]),
        ("replay", vec!["replay".into(), "--pair".into(), "alpha,beta".into(), "--budget".into(), "300,500".into(), "--b".into(), "20".into(), "--q".into(), "0.25".into(), "--trials".into(), "300".into()]),
        ("margins", vec!["margins".into(), "--min-decisive".into(), "100".into(), "--bootstrap".into(), "200".into()]),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, args) in commands {
        let mut outputs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
        for run in 0..2 {
            let out: PathBuf = dir.path().join(format!("{name}-{run}.csv"));
            let mut full = args.clone();
            full.extend(["--input".into(), s(&data), "--seed".into(), "99".into(), "--out".into(), s(&out)]);
            let (code, stdout) = run_cli(&full);
            if code != 0 {
                return Err(format!("{name} exited with {code}"));
            }
            let manifest = std::fs::read(format!("{}.manifest.json", out.display())).unwrap();
            outputs.push((std::fs::read(&out).unwrap(), manifest, stdout));
        }
        let same = outputs[0] == outputs[1];
        ok &= same && !outputs[0].0.is_empty();
        detail.push(format!("{name} {}", if same { "identical" } else { "DIFFERS" }));
    }
    check(ok, detail.join(", "))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("budget constant", c1_constant),
        ("margin-quantile budget table", c2_margin_budgets),
        ("near-tie budgets", c3_near_tie_budgets),
        ("pilot worked example", c4_worked_example),
        ("correlation sensitivity table", c5_icc_inflation),
        ("Bernoulli KL bounds", c6_kl_bounds),
        ("Monte-Carlo power calibration", c7_power_calibration),
        ("null calibration", c8_null_calibration),
        ("allocation regime ordering", c9_regime_ordering),
        ("diffuse signal mass", c10_signal_mass),
        ("likelihood-ratio type-I bound", c11_llr_bound),
        ("replay/simulate equivalence", c12_replay_equivalence),
        ("singleton-cluster identity", c13_singleton_clusters),
        ("determinism", c14_determinism),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {:>2} PASS  {name} ({secs:.2}s): {d}", i + 1),
            Err(d) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.2}s): {d}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
