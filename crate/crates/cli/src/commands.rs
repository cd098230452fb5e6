use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mac_core::baselines::{evaluate_baseline, tune, BaselineKind};
use mac_core::data::{
    clean_outliers, holdout, load_csv, split, synthesize, write_csv, Dataset, EncodedDataset, FeatureSchema, Group,
    Mappings, Preprocessor, SynthSpec,
};
use mac_core::model::{attention_records, write_attention_csv, Ablation, Checkpoint, MacModel, ModelConfig};
use mac_core::train::{cross_validate, evaluate, predictions, train, MetricsReport, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::{read_json, write_json, ModelArgs, RunConfig, TrainArgs};
use crate::{Axis, BaselineArg, Cli, Command, InputArgs, SplitName, Variant};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess { input, out } => preprocess(cli, input, out),
        Command::Synth {
            out,
            spec,
            samples,
            linear,
        } => synth(cli, out, spec.as_deref(), *samples, *linear),
        Command::Train {
            data,
            out,
            model,
            train,
        } => cmd_train(cli, data, out, model, train),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => cmd_evaluate(checkpoint, data, *split, out.as_deref()),
        Command::Cv {
            input,
            out,
            k,
            sequential,
            model,
            train,
        } => cmd_cv(cli, input, out, *k, !*sequential, model, train),
        Command::Predict {
            checkpoint,
            input,
            mappings,
            out,
        } => cmd_predict(checkpoint, input, mappings, out),
        Command::ExportAttention {
            checkpoint,
            data,
            split,
            sample,
            out,
            csv,
        } => cmd_export(checkpoint, data, *split, *sample, out, *csv),
        Command::Baseline { data, out, kind } => cmd_baseline(cli, data, out, *kind),
        Command::Ablate {
            data,
            out,
            variant,
            model,
            train,
        } => cmd_ablate(cli, data, out, *variant, model, train),
        Command::Sweep {
            data,
            out,
            axis,
            grid,
            model,
            train,
        } => cmd_sweep(cli, data, out, *axis, grid, model, train),
    }
}

fn run_config(
    cli: &Cli,
    command: &str,
    out: &Path,
    model: Option<&ModelArgs>,
    train: Option<&TrainArgs>,
    options: serde_json::Value,
) -> Result<RunConfig> {
    let mut rc = RunConfig {
        command: command.to_owned(),
        seed: cli.seed,
        schema: None,
        inputs: Vec::new(),
        out: out.to_owned(),
        model: ModelConfig::default(),
        train: TrainConfig::default(),
        options,
    };
    if let Some(m) = model {
        m.apply(&mut rc.model);
    }
    if let Some(t) = train {
        t.apply(&mut rc.train);
    }
    rc.with_overrides(cli.config.as_deref())
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn parse_mappings(specs: &[String]) -> Result<Mappings> {
    let mut m = Mappings::new();
    for spec in specs {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("mapping {spec:?} is not NAME=PATH"))?;
        m.load(name, path)?;
    }
    Ok(m)
}

fn load_input(input: &InputArgs) -> Result<(FeatureSchema, Dataset)> {
    let schema = FeatureSchema::load(&input.schema)?;
    let mappings = parse_mappings(&input.mappings)?;
    let data = load_csv(&input.input, &schema, &mappings)?;
    log::info!("loaded {} rows from {}", data.len(), input.input.display());
    Ok((schema, data))
}

fn cleaned(input: &InputArgs) -> Result<(FeatureSchema, Dataset, Vec<mac_core::data::RemovedRow>)> {
    let (schema, data) = load_input(input)?;
    let (clean, removed) = clean_outliers(&data, input.z_threshold);
    for r in &removed {
        log::info!(
            "removed {} row {}: output {:?} has z = {:.3}",
            r.provenance.source,
            r.provenance.row,
            r.column,
            r.z
        );
    }
    log::info!("removed {} of {} rows at |z| > {}", removed.len(), data.len(), input.z_threshold);
    Ok((schema, clean, removed))
}

fn preprocess(cli: &Cli, input: &InputArgs, out: &Path) -> Result<()> {
    let mut rc = run_config(cli, "preprocess", out, None, None, json!({ "z_threshold": input.z_threshold }))?;
    rc.schema = Some(input.schema.clone());
    rc.inputs = vec![input.input.clone()];
    let (schema, data, removed) = cleaned(input)?;
    let idx = split(data.len(), rc.seed)?;
    let parts = [
        ("train", data.subset(&idx.train)),
        ("val", data.subset(&idx.val)),
        ("test", data.subset(&idx.test)),
    ];
    let pre = Preprocessor::fit(&parts[0].1)?;
    create_dir(out)?;
    write_json(&out.join("schema.json"), &schema)?;
    write_json(&out.join("preprocessor.json"), &pre)?;
    write_json(&out.join("removed.json"), &removed)?;
    write_json(&out.join("split.json"), &idx)?;
    for (name, part) in &parts {
        write_csv(part, out.join(format!("{name}.csv")))?;
        write_json(&out.join(format!("{name}.json")), &pre.apply(part)?)?;
    }
    rc.save(out)?;
    println!(
        "train {} / val {} / test {} rows; {} removed; written to {}",
        idx.train.len(),
        idx.val.len(),
        idx.test.len(),
        removed.len(),
        out.display()
    );
    Ok(())
}

fn synth(cli: &Cli, out: &Path, spec_path: Option<&Path>, samples: Option<usize>, linear: bool) -> Result<()> {
    let mut spec: SynthSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = samples {
        spec.n_samples = n;
    }
    if linear {
        spec.interactions = 0;
    }
    let rc = run_config(cli, "synth", out, None, None, serde_json::to_value(&spec)?)?;
    let (data, generator) = synthesize(&spec, rc.seed)?;
    create_dir(out)?;
    write_csv(&data, out.join("data.csv"))?;
    write_json(&out.join("schema.json"), &generator.schema())?;
    write_json(&out.join("generator.json"), &generator)?;
    rc.save(out)?;
    println!("{} samples, {} features written to {}", data.len(), data.layout.features.len(), out.display());
    Ok(())
}

/// The files written by `preprocess`.
struct Prepared {
    schema: FeatureSchema,
    pre: Preprocessor,
    dir: PathBuf,
}

impl Prepared {
    fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            schema: FeatureSchema::load(dir.join("schema.json"))?,
            pre: read_json(&dir.join("preprocessor.json"))?,
            dir: dir.to_owned(),
        })
    }

    fn split(&self, name: SplitName) -> Result<EncodedDataset> {
        let d: EncodedDataset = read_json(&self.dir.join(format!("{}.json", name.as_str())))?;
        if d.layout != self.schema.layout() {
            bail!("{} split does not match schema.json", name.as_str());
        }
        Ok(d)
    }
}

struct Trained {
    model: MacModel,
    history: mac_core::train::History,
}

fn fit(prep: &Prepared, model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    let train_set = prep.split(SplitName::Train)?;
    let val_set = prep.split(SplitName::Val)?;
    let mut model = MacModel::new(&prep.schema, model_cfg, seed)?;
    log::info!(
        "training {} parameters on {} samples for {} epochs",
        model.param_count(),
        train_set.len(),
        train_cfg.epochs
    );
    let history = train(&mut model, &train_set, &val_set, train_cfg, Some(&prep.pre))?;
    Ok(Trained { model, history })
}

fn mape_text(r: &MetricsReport) -> String {
    r.aggregate
        .mape
        .map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3}%"))
}

fn cmd_train(cli: &Cli, data: &Path, out: &Path, model: &ModelArgs, train_args: &TrainArgs) -> Result<()> {
    let mut rc = run_config(cli, "train", out, Some(model), Some(train_args), serde_json::Value::Null)?;
    rc.inputs = vec![data.to_owned()];
    let prep = Prepared::load(data)?;
    let trained = fit(&prep, &rc.model, &rc.train, rc.seed)?;
    let report = evaluate(&trained.model, &prep.split(SplitName::Val)?, Some(&prep.pre))?;
    create_dir(out)?;
    Checkpoint::from_model(&trained.model, rc.seed, Some(&prep.pre)).save(out.join("checkpoint.json"))?;
    write_json(&out.join("history.json"), &trained.history)?;
    write_json(&out.join("val_report.json"), &report)?;
    rc.save(out)?;
    print!("{}", report.table());
    println!(
        "validation MAPE {} (best epoch {:?}); checkpoint in {}",
        mape_text(&report),
        trained.history.best_epoch,
        out.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, schema: Option<&FeatureSchema>) -> Result<(MacModel, Preprocessor)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let (model, pre) = ck.into_model(schema)?;
    let pre = pre.context("checkpoint carries no preprocessing state")?;
    Ok((model, pre))
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, which: SplitName, out: Option<&Path>) -> Result<()> {
    let prep = Prepared::load(data)?;
    let (model, pre) = load_checkpoint(checkpoint, Some(&prep.schema))?;
    if pre != prep.pre {
        bail!("checkpoint was trained with different preprocessing than {}", data.display());
    }
    let report = evaluate(&model, &prep.split(which)?, Some(&pre))?;
    print!("{}", report.table());
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_cv(
    cli: &Cli,
    input: &InputArgs,
    out: &Path,
    k: usize,
    parallel: bool,
    model: &ModelArgs,
    train_args: &TrainArgs,
) -> Result<()> {
    let mut rc = run_config(
        cli,
        "cv",
        out,
        Some(model),
        Some(train_args),
        json!({ "k": k, "z_threshold": input.z_threshold, "parallel": parallel }),
    )?;
    rc.schema = Some(input.schema.clone());
    rc.inputs = vec![input.input.clone()];
    let (schema, data, _) = cleaned(input)?;
    let (pool, test) = holdout(data.len(), rc.seed)?;
    log::info!("{k}-fold cross-validation on {} rows; {} rows held out", pool.len(), test.len());
    let report = cross_validate(&schema, &data.subset(&pool), &rc.model, &rc.train, k, parallel)?;
    create_dir(out)?;
    write_json(&out.join("cv_report.json"), &report)?;
    write_json(&out.join("holdout.json"), &json!({ "pool": pool, "test": test }))?;
    rc.save(out)?;
    for f in &report.folds {
        println!("fold {} (validation {} rows)", f.fold, f.val_size);
        print!("{}", f.report.table());
    }
    println!("mean over {k} folds");
    print!("{}", report.mean.table());
    Ok(())
}

fn cmd_predict(checkpoint: &Path, input: &Path, mappings: &[String], out: &Path) -> Result<()> {
    let (model, pre) = load_checkpoint(checkpoint, None)?;
    let data = load_csv(input, model.schema(), &parse_mappings(mappings)?)?;
    let encoded = pre.apply(&data)?;
    let preds = predictions(&model, &encoded, Some(&pre))?;
    let columns = &model.schema().outputs.columns;
    let mut text = String::from("row");
    for c in columns {
        let _ = write!(text, ",{c},predicted_{c}");
    }
    text.push('\n');
    for (s, p) in encoded.samples.iter().zip(&preds) {
        let _ = write!(text, "{}", s.provenance.row);
        for (t, v) in s.raw_targets.iter().zip(p) {
            let _ = write!(text, ",{t},{v}");
        }
        text.push('\n');
    }
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("{} predictions written to {}", preds.len(), out.display());
    Ok(())
}

fn cmd_export(checkpoint: &Path, data: &Path, which: SplitName, sample: usize, out: &Path, csv: bool) -> Result<()> {
    let prep = Prepared::load(data)?;
    let (model, _) = load_checkpoint(checkpoint, Some(&prep.schema))?;
    let set = prep.split(which)?;
    let s = set
        .samples
        .get(sample)
        .with_context(|| format!("{} split has {} samples, no index {sample}", which.as_str(), set.len()))?;
    let trace = model.trace(s)?;
    let id = format!("{}:{}", which.as_str(), sample);
    let records = attention_records(&trace, &prep.schema.outputs.suite, &id);
    create_dir(out)?;
    write_json(&out.join("attention.json"), &records)?;
    if csv {
        write_attention_csv(&records, out.join("attention.csv"))?;
    }
    for g in &trace.intra {
        println!("{}: {}×{} per head", g.group, g.labels.len(), g.labels.len());
    }
    println!("inter: {}×{} per head", trace.intra.len(), trace.intra.len());
    println!("{} matrices written to {}", records.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct BaselineRow {
    kind: BaselineKind,
    l1: f64,
    l2: f64,
    converged: bool,
    val: MetricsReport,
    test: MetricsReport,
}

fn cmd_baseline(cli: &Cli, data: &Path, out: &Path, kind: BaselineArg) -> Result<()> {
    let mut rc = run_config(cli, "baseline", out, None, None, json!({ "kind": format!("{kind:?}").to_lowercase() }))?;
    rc.inputs = vec![data.to_owned()];
    let prep = Prepared::load(data)?;
    let (train_set, val_set, test_set) = (
        prep.split(SplitName::Train)?,
        prep.split(SplitName::Val)?,
        prep.split(SplitName::Test)?,
    );
    let kinds: Vec<BaselineKind> = match kind {
        BaselineArg::Ridge => vec![BaselineKind::Ridge],
        BaselineArg::Lasso => vec![BaselineKind::Lasso],
        BaselineArg::Elasticnet => vec![BaselineKind::ElasticNet],
        BaselineArg::All => BaselineKind::ALL.to_vec(),
    };
    let mut rows = Vec::new();
    for k in kinds {
        let fitted = tune(k, &train_set, &val_set, Some(&prep.pre))?;
        let test = evaluate_baseline(&fitted.model, &test_set, Some(&prep.pre))?;
        rows.push(BaselineRow {
            kind: k,
            l1: fitted.model.l1,
            l2: fitted.model.l2,
            converged: fitted.model.converged,
            val: fitted.val_report,
            test,
        });
    }
    create_dir(out)?;
    write_json(&out.join("baselines.json"), &rows)?;
    rc.save(out)?;
    println!("{:<12} {:>8} {:>8} {:>12} {:>14} {:>10}", "model", "l1", "l2", "test MAE", "test MSE", "test MAPE");
    for r in &rows {
        println!(
            "{:<12} {:>8.0e} {:>8.0e} {:>12.4} {:>14.4} {:>10}",
            r.kind.as_str(),
            r.l1,
            r.l2,
            r.test.aggregate.mae,
            r.test.aggregate.mse,
            mape_text(&r.test)
        );
    }
    Ok(())
}

impl Variant {
    const ROWS: [Variant; 7] = [
        Variant::MambaOnly,
        Variant::MambaIntra,
        Variant::Full,
        Variant::WithoutChar,
        Variant::WithoutMem,
        Variant::WithoutCpu,
        Variant::WithoutOther,
    ];

    fn label(self) -> &'static str {
        match self {
            Variant::MambaOnly => "mamba-only",
            Variant::MambaIntra => "mamba+intra",
            Variant::Full => "full",
            Variant::WithoutChar => "w/o-char",
            Variant::WithoutMem => "w/o-mem",
            Variant::WithoutCpu => "w/o-cpu",
            Variant::WithoutOther => "w/o-other",
            Variant::All => "all",
        }
    }

    fn ablation(self) -> Ablation {
        let base = Ablation::default();
        let drop = |g| Ablation {
            drop_group: Some(g),
            ..base
        };
        match self {
            Variant::MambaOnly => Ablation {
                use_intra: false,
                use_inter: false,
                ..base
            },
            Variant::MambaIntra => Ablation {
                use_inter: false,
                ..base
            },
            Variant::Full | Variant::All => base,
            Variant::WithoutChar => drop(Group::Char),
            Variant::WithoutMem => drop(Group::Memory),
            Variant::WithoutCpu => drop(Group::Cpu),
            Variant::WithoutOther => drop(Group::Other),
        }
    }
}

#[derive(Serialize)]
struct ResultRow {
    label: String,
    params: usize,
    best_epoch: Option<usize>,
    test: MetricsReport,
}

fn result_table(title: &str, rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>8} {:>12} {:>14} {:>10}", title, "params", "MAE", "MSE", "MAPE");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>12.4} {:>14.4} {:>10}",
            r.label,
            r.params,
            r.test.aggregate.mae,
            r.test.aggregate.mse,
            mape_text(&r.test)
        );
    }
    s
}

fn train_and_test(prep: &Prepared, model_cfg: &ModelConfig, rc: &RunConfig, label: String) -> Result<ResultRow> {
    let trained = fit(prep, model_cfg, &rc.train, rc.seed)?;
    let test = evaluate(&trained.model, &prep.split(SplitName::Test)?, Some(&prep.pre))?;
    log::info!("{label}: test MAE {:.4} MAPE {}", test.aggregate.mae, mape_text(&test));
    Ok(ResultRow {
        label,
        params: trained.model.param_count(),
        best_epoch: trained.history.best_epoch,
        test,
    })
}

fn cmd_ablate(
    cli: &Cli,
    data: &Path,
    out: &Path,
    variant: Variant,
    model: &ModelArgs,
    train_args: &TrainArgs,
) -> Result<()> {
    let mut rc = run_config(cli, "ablate", out, Some(model), Some(train_args), json!({ "variant": variant.label() }))?;
    rc.inputs = vec![data.to_owned()];
    let prep = Prepared::load(data)?;
    let variants: Vec<Variant> = if variant == Variant::All {
        Variant::ROWS.to_vec()
    } else {
        vec![variant]
    };
    let mut rows = Vec::new();
    for v in variants {
        let cfg = ModelConfig {
            ablation: v.ablation(),
            ..rc.model.clone()
        };
        rows.push(train_and_test(&prep, &cfg, &rc, v.label().to_owned())?);
    }
    let table = result_table("variant", &rows);
    create_dir(out)?;
    write_json(&out.join("ablation.json"), &rows)?;
    std::fs::write(out.join("ablation.txt"), &table)?;
    rc.save(out)?;
    print!("{table}");
    Ok(())
}

impl Axis {
    fn default_grid(self) -> Vec<f64> {
        match self {
            Axis::S | Axis::N => vec![1.0, 2.0, 4.0, 8.0, 16.0],
            Axis::L => vec![1.0, 2.0, 3.0],
            Axis::H => vec![1.0, 2.0, 3.0, 4.0, 5.0],
            Axis::Delta => vec![0.1, 1.0, 10.0],
        }
    }

    fn apply(self, cfg: &mut ModelConfig, v: f64) -> Result<()> {
        let as_count = || -> Result<usize> {
            if v < 1.0 || v.fract() != 0.0 {
                bail!("{self:?} takes positive integers, got {v}");
            }
            Ok(v as usize)
        };
        match self {
            Axis::S => cfg.expand = as_count()?,
            Axis::N => cfg.state_dim = as_count()?,
            Axis::L => cfg.attn_layers = as_count()?,
            Axis::H => cfg.attn_heads = as_count()?,
            Axis::Delta => cfg.huber_delta = v,
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    cli: &Cli,
    data: &Path,
    out: &Path,
    axis: Axis,
    grid: &[f64],
    model: &ModelArgs,
    train_args: &TrainArgs,
) -> Result<()> {
    let grid = if grid.is_empty() { axis.default_grid() } else { grid.to_vec() };
    let mut rc = run_config(
        cli,
        "sweep",
        out,
        Some(model),
        Some(train_args),
        json!({ "axis": format!("{axis:?}"), "grid": grid }),
    )?;
    rc.inputs = vec![data.to_owned()];
    let prep = Prepared::load(data)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &v in &grid {
        let mut cfg = rc.model.clone();
        axis.apply(&mut cfg, v)?;
        let label = format!("{axis:?}={v}");
        if let Err(e) = cfg.validate() {
            log::warn!("skipping {label}: {e}");
            skipped.push(json!({ "value": v, "reason": e.to_string() }));
            continue;
        }
        rows.push(train_and_test(&prep, &cfg, &rc, label)?);
    }
    let table = result_table("setting", &rows);
    create_dir(out)?;
    write_json(&out.join("sweep.json"), &json!({ "runs": rows, "skipped": skipped }))?;
    std::fs::write(out.join("sweep.txt"), &table)?;
    rc.save(out)?;
    print!("{table}");
    Ok(())
}
