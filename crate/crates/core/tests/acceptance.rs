//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::{grad_check, random_batch, random_params, rng, GradCheck};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use streamflow::experiment::{
    execute, run, DataSource, ExperimentConfig, ModelChoice, LONG_FILE, STATION_SUMMARY_FILE, SUMMARY_FILE,
};
use streamflow::ingest::{load_static_csv, MissingPolicy};
use streamflow::metrics::{nse_per_step, rmse, ser, ser_members, MetricSpace, SER_LEVELS};
use streamflow::neural::{forward, train, LossSpec, NetKind, NetSpec, TrainConfig};
use streamflow::series::{embed, SplitSpec, WindowedDataset};
use streamflow::strategy::{IndicatorEncoding, StrategyKind};
use streamflow::switch::{build_fdc, select_branch, switch_predict, train_switch, Branch, SwitchConfig};
use streamflow::synth::{generate, SynthRegionSpec, SynthSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn gradient_correctness() -> Outcome {
    let losses = [
        LossSpec::Mse,
        LossSpec::Pinball { tau: 0.5 },
        LossSpec::Pinball { tau: 0.7 },
        LossSpec::Pinball { tau: 0.95 },
    ];
    let kinds = [NetKind::Lstm, NetKind::BdLstm, NetKind::EdLstm, NetKind::Cnn1d];
    let combos: Vec<(NetKind, LossSpec)> = kinds
        .iter()
        .flat_map(|&k| losses.iter().map(move |&l| (k, l)))
        .collect();
    let draws = 200;
    let results: Vec<(NetKind, LossSpec, GradCheck)> = combos
        .par_iter()
        .enumerate()
        .map(|(c, &(kind, loss))| {
            let spec = NetSpec::new(kind, 6, 5, 5, 4);
            let mut r = rng(1000 + c as u64);
            let mut total = GradCheck::default();
            for _ in 0..draws {
                let p = random_params(&spec, &mut r, 0.8);
                let (x, y) = random_batch(&spec, 2, &mut r);
                total.merge(grad_check(&spec, &p, &x, &y, &loss, 1e-5, 1e-4));
            }
            (kind, loss, total)
        })
        .collect();
    let mut all = GradCheck::default();
    for (kind, loss, g) in &results {
        if g.failures > 0 || g.kinks * 100 > g.checked {
            return Err(format!("{kind} {}: {g:?}", loss.label()));
        }
        all.merge(*g);
    }
    Ok(format!(
        "{} combos x {draws} draws, {} components, {} kinks skipped, worst rel {:.1e}",
        results.len(),
        all.checked,
        all.kinks,
        all.worst_rel
    ))
}

fn sorted_quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn quantile_recovery() -> Outcome {
    let mut r = rng(77);
    let exp = Exp::new(1.0).unwrap();
    let y: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut r)).collect();
    let ds = WindowedDataset {
        inputs: vec![0.0; y.len()],
        targets: y.clone(),
        origin_index: (0..y.len()).collect(),
        station_index: vec![0; y.len()],
        window: 1,
        horizon: 1,
        n_features: 1,
        source_len: y.len() + 1,
    };
    let spec = NetSpec::new(NetKind::Dense, 1, 1, 1, 0);
    let mut notes = Vec::new();
    for (tau, tol) in [(0.70, 0.05), (0.95, 0.08)] {
        let cfg = TrainConfig {
            max_epochs: 30,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&spec, &ds, &LossSpec::pinball(tau).unwrap(), &cfg, None).map_err(|e| e.to_string())?;
        let u = forward(&spec, &out.params, &[0.0]).unwrap()[0];
        let q = sorted_quantile(&y, tau);
        let rel = (u - q).abs() / q;
        notes.push(format!("tau {tau}: {u:.4} vs {q:.4} ({:.2}%)", rel * 100.0));
        if rel > tol {
            return Err(notes.join("; "));
        }
    }
    Ok(notes.join("; "))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

fn metric_oracles() -> Outcome {
    let mut r = rng(5);
    for inst in 0..1000 {
        let m = r.random_range(1..=50usize);
        let h = r.random_range(1..=5usize);
        let ties = inst % 4 == 0;
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            let v: f64 = r.random_range(0.0..10.0);
            if ties {
                v.round()
            } else {
                v
            }
        };
        let obs: Vec<f64> = (0..m * h).map(|_| draw(&mut r)).collect();
        let pred: Vec<f64> = (0..m * h).map(|_| draw(&mut r)).collect();

        let got = rmse(&pred, &obs, h).unwrap();
        let mut agg = 0.0;
        for k in 0..h {
            let mut s = 0.0;
            for i in 0..m {
                let d = pred[i * h + k] - obs[i * h + k];
                s += d * d;
            }
            let step = (s / m as f64).sqrt();
            if !close(got.per_step[k], step) {
                return Err(format!("instance {inst}: rmse step {k}"));
            }
            agg += step / h as f64;
        }
        if !close(got.aggregate, agg) {
            return Err(format!("instance {inst}: rmse aggregate"));
        }

        let nses = nse_per_step(&pred, &obs, h).unwrap();
        for k in 0..h {
            let mut mean = 0.0;
            for i in 0..m {
                mean += obs[i * h + k];
            }
            mean /= m as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..m {
                num += (obs[i * h + k] - pred[i * h + k]).powi(2);
                den += (obs[i * h + k] - mean).powi(2);
            }
            let ok = match nses[k] {
                None => den == 0.0,
                Some(v) => den != 0.0 && close(v, 1.0 - num / den),
            };
            if !ok {
                return Err(format!("instance {inst}: nse step {k}"));
            }
        }

        let mut prev: Vec<usize> = Vec::new();
        for level in SER_LEVELS {
            let thr = sorted_quantile(&obs, 1.0 - level as f64 / 100.0);
            let mut members = Vec::new();
            for i in 0..m {
                let mut mx = f64::MIN;
                for k in 0..h {
                    mx = mx.max(obs[i * h + k]);
                }
                if mx >= thr {
                    members.push(i);
                }
            }
            let want = if members.is_empty() {
                None
            } else {
                let mut s = 0.0;
                for &i in &members {
                    for k in 0..h {
                        s += (pred[i * h + k] - obs[i * h + k]).powi(2);
                    }
                }
                Some((s / (members.len() * h) as f64).sqrt())
            };
            let got = ser(&pred, &obs, h, level).unwrap();
            let ok = match (got, want) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return Err(format!("instance {inst}: SER{level} {got:?} vs {want:?}"));
            }
            let lib_members = ser_members(&obs, h, level).unwrap();
            if lib_members != members {
                return Err(format!("instance {inst}: SER{level} membership"));
            }
            if !prev.iter().all(|i| members.contains(i)) {
                return Err(format!(
                    "instance {inst}: SER{level} does not contain the previous level"
                ));
            }
            prev = members;
        }
    }
    Ok("1000 instances, rmse/nse/ser within 1e-12, SER sets nested".into())
}

fn embedding_oracle() -> Outcome {
    let mut r = rng(9);
    let mut cases = 0;
    for n in [3usize, 5] {
        for h in [1usize, 5] {
            for t in n + h..=n + h + 50 {
                let f = 4;
                let mat: Vec<Vec<f64>> = (0..f).map(|_| (0..t).map(|_| r.random::<f64>()).collect()).collect();
                let target_row = 2;
                let ds = embed(&mat, target_row, n, h).map_err(|e| e.to_string())?;
                let mut placements = 0;
                for m in 0.. {
                    if m + n + h > t {
                        break;
                    }
                    let mut x = Vec::new();
                    for lag in 0..n {
                        for row in &mat {
                            x.push(row[m + lag]);
                        }
                    }
                    let y: Vec<f64> = (0..h).map(|k| mat[target_row][m + n + k]).collect();
                    if m >= ds.len() || ds.input(m) != &x[..] || ds.target(m) != &y[..] || ds.origin_index[m] != m {
                        return Err(format!("T={t} N={n} H={h}: sample {m} differs"));
                    }
                    placements += 1;
                }
                if ds.len() != placements {
                    return Err(format!(
                        "T={t} N={n} H={h}: {} samples, {placements} placements",
                        ds.len()
                    ));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (T, N, H) cases match enumeration"))
}

fn switch_partition() -> Outcome {
    let cfg = SwitchConfig::default();
    for i in 0..=10_000 {
        let a = i as f64 / 10_000.0;
        let fired = [a > 0.95, (0.70..=0.95).contains(&a), a < 0.70];
        if fired.iter().filter(|&&f| f).count() != 1 {
            return Err(format!("alpha {a}: {fired:?}"));
        }
        let want = [Branch::Hi, Branch::Mid, Branch::Lo][fired.iter().position(|&f| f).unwrap()];
        if select_branch(a, &cfg) != want {
            return Err(format!("alpha {a}: got {:?}", select_branch(a, &cfg)));
        }
    }
    if select_branch(0.70, &cfg) != Branch::Mid || select_branch(0.95, &cfg) != Branch::Mid {
        return Err("boundary values not routed to mid".into());
    }

    let series = generate(&SynthSpec {
        seed: 11,
        length_days: 600,
        ..SynthSpec::default()
    })
    .unwrap();
    let matrix = series.feature_matrix();
    let split = SplitSpec::default();
    let boundary = split.boundary_index(series.len());
    let scaler = streamflow::series::fit_minmax(&matrix, boundary).unwrap();
    let scaled = streamflow::series::apply_scale(&matrix, &scaler).unwrap();
    let ds = embed(&scaled, streamflow::series::STREAMFLOW_ROW, 5, 5).unwrap();
    let (tr, te) = streamflow::series::chrono_split(&ds, &split).unwrap();
    let fdc = build_fdc(&series.streamflow[..boundary]).unwrap();
    let spec = NetSpec::new(NetKind::Lstm, 6, 5, 5, 4);
    let tc = TrainConfig {
        max_epochs: 2,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut ens = train_switch(&tr, &spec, fdc, &scaler, &cfg, &tc).map_err(|e| e.to_string())?;
    let forced = [
        (cfg, None),
        (
            SwitchConfig {
                hi_threshold: -1.0,
                mid_threshold: -1.0,
                ..cfg
            },
            Some(Branch::Hi),
        ),
        (
            SwitchConfig {
                hi_threshold: 2.0,
                mid_threshold: -1.0,
                ..cfg
            },
            Some(Branch::Mid),
        ),
        (
            SwitchConfig {
                hi_threshold: 2.0,
                mid_threshold: 2.0,
                ..cfg
            },
            Some(Branch::Lo),
        ),
    ];
    let mut compared = 0;
    for (c, expect) in forced {
        ens.config = c;
        for m in 0..te.len() {
            let (out, b, _) = switch_predict(&ens, te.input(m)).map_err(|e| e.to_string())?;
            if expect.is_some_and(|e| e != b) {
                return Err(format!("forced routing to {expect:?} gave {b:?}"));
            }
            let standalone = forward(&ens.branch_spec, ens.branch_params(b), te.input(m)).unwrap();
            if out.iter().zip(&standalone).any(|(a, s)| a.to_bits() != s.to_bits()) {
                return Err(format!("window {m}: switch output differs from {b} branch"));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "10001 alphas, one branch each; {compared} routed forecasts bit-identical"
    ))
}

fn synth_config(out: PathBuf, stations: usize, days: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synth {
            region: SynthRegionSpec {
                stations,
                base: SynthSpec {
                    length_days: days,
                    tail_index: 1.8,
                    ..SynthSpec::default()
                },
                ..SynthRegionSpec::default()
            },
        },
        strategies: vec![StrategyKind::Individual],
        models: vec![ModelChoice::Net(NetKind::Lstm)],
        window: 5,
        horizon: 5,
        split: SplitSpec::default(),
        hidden_units: None,
        indicator: IndicatorEncoding::OneHot,
        switch: SwitchConfig::default(),
        train: TrainConfig::default(),
        runs: 1,
        seed: 0,
        output_dir: out,
        metric_space: MetricSpace::Scaled,
        write_traces: false,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn quantile_switch_direction() -> Outcome {
    let mut cfg = synth_config(PathBuf::from("unused"), 1, 4000);
    cfg.models = vec![ModelChoice::Net(NetKind::Lstm), ModelChoice::QuantileLstm];
    cfg.runs = 5;
    cfg.train.max_epochs = 60;
    let result = execute(&cfg).map_err(|e| e.to_string())?;
    let ser1 = |model: &str| -> Vec<f64> {
        result
            .reports
            .iter()
            .filter(|r| r.model == model)
            .map(|r| r.ser[0].expect("SER1 defined"))
            .collect()
    };
    let (plain, switched) = (ser1("lstm"), ser1("quantile_lstm"));
    let (mp, ms) = (median(plain.clone()), median(switched.clone()));
    let detail = format!("median SER1 quantile switch {ms:.5} vs MSE LSTM {mp:.5} over 5 seeds, 60 epochs");
    if ms <= mp {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn strategy_harness() -> Outcome {
    let mut cfg = synth_config(PathBuf::from("unused"), 3, 1500);
    cfg.strategies = StrategyKind::ALL.to_vec();
    cfg.train.max_epochs = 10;
    let result = execute(&cfg).map_err(|e| e.to_string())?;
    for s in StrategyKind::ALL {
        let reports: Vec<_> = result.reports.iter().filter(|r| r.strategy == s.name()).collect();
        if reports.len() != 3 || reports.iter().any(|r| !r.rmse.is_finite()) {
            return Err(format!("{s}: {} station reports", reports.len()));
        }
    }
    let fit = result
        .jobs
        .iter()
        .find_map(|j| j.outcome.stack_fit)
        .ok_or("stacked ensemble reported no fit")?;
    let bound = fit.temporal_rmse.min(fit.static_rmse) + 1e-9;
    let detail = format!(
        "4 strategies x 3 stations; stacked fit RMSE {:.5}, temporal {:.5}, static {:.5}",
        fit.ensemble_rmse, fit.temporal_rmse, fit.static_rmse
    );
    if fit.ensemble_rmse <= bound {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = synth_config(tmp.path().join("a"), 2, 400);
    cfg.strategies = vec![StrategyKind::Individual, StrategyKind::StackedEnsemble];
    cfg.runs = 2;
    cfg.train.max_epochs = 3;
    cfg.write_traces = true;
    run(&cfg).map_err(|e| e.to_string())?;
    cfg.output_dir = tmp.path().join("b");
    run(&cfg).map_err(|e| e.to_string())?;
    for f in [SUMMARY_FILE, STATION_SUMMARY_FILE, LONG_FILE] {
        let a = fs::read(tmp.path().join("a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(tmp.path().join("b").join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok("summary, per-station and long CSVs byte-identical across two runs".into())
}

/// Runs only when `STREAMFLOW_CAMELS_DIR` points at a directory holding
/// per-station CSVs and `statics.csv` with a `state` column.
fn camels_smoke() -> Option<Outcome> {
    let root = PathBuf::from(std::env::var_os("STREAMFLOW_CAMELS_DIR")?);
    Some((|| {
        let statics_path = root.join("statics.csv");
        let table = load_static_csv(&statics_path).map_err(|e| e.to_string())?;
        let station = table
            .states
            .iter()
            .filter(|(_, s)| s.as_str() == "SA")
            .map(|(id, _)| id.clone())
            .find(|id| root.join(format!("{id}.csv")).is_file())
            .ok_or("no SA station with a timeseries file")?;
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = tmp.path().join("data");
        fs::create_dir_all(&data).map_err(|e| e.to_string())?;
        fs::copy(root.join(format!("{station}.csv")), data.join(format!("{station}.csv")))
            .map_err(|e| e.to_string())?;
        let mut cfg = synth_config(tmp.path().join("out"), 1, 0);
        cfg.data = DataSource::Csv {
            timeseries_dir: data,
            static_csv: Some(statics_path),
            state: Some("SA".into()),
            missing: MissingPolicy::default(),
        };
        cfg.train.max_epochs = 150;
        let result = execute(&cfg).map_err(|e| e.to_string())?;
        let nse1 = result.reports[0].nse_per_step[0].ok_or("NSE undefined")?;
        let detail = format!("station {station}: test NSE at step 1 = {nse1:.3}");
        if nse1 > 0.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradient_correctness),
        ("quantile recovery", quantile_recovery),
        ("metric oracles", metric_oracles),
        ("embedding oracle", embedding_oracle),
        ("switch partition", switch_partition),
        ("quantile switch SER1 direction", quantile_switch_direction),
        ("strategy harness", strategy_harness),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {}. {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL  {}. {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    match camels_smoke() {
        None => println!("SKIP  9. real-data smoke test: STREAMFLOW_CAMELS_DIR not set"),
        Some(Ok(d)) => println!("PASS  9. real-data smoke test: {d}"),
        Some(Err(d)) => {
            failed += 1;
            println!("FAIL  9. real-data smoke test: {d}");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
