use std::fs;
use std::path::{Path, PathBuf};

use boltzmann::crbm::{self, CrbmOptions, History, SequenceDataset};
use boltzmann::dbn::{self, DbnSpec, Mlp};
use boltzmann::gibbs;
use boltzmann::oracle::ENUMERATION_CAP;
use boltzmann::persist::{load_model, save_model, Model, ModelFile, Standardization};
use boltzmann::trainer::{self, BmOptions, TrainReport};
use boltzmann::{units, Dataset, RngStream, UnitFamily};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde_json::{json, Value};

use crate::args::{DataArgs, FinetuneCmd, OracleCheckCmd, PretrainCmd, SampleCmd, TrainCmd, TrainKind, TransformCmd};
use crate::check::{self, all_visible};
use crate::data::{read_sequences, read_table, to_dataset, write_table};
use crate::error::CliError;
use crate::manifest::report_path;

/// Files touched by a run, plus a failure to report after the manifest is written.
#[derive(Debug, Default)]
pub struct RunInfo {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub failure: Option<CliError>,
}

fn family_of(args: &DataArgs) -> Result<UnitFamily, CliError> {
    let family: UnitFamily = args.family.into();
    if args.standardize && family != UnitFamily::Gaussian {
        return Err(CliError::Usage("--standardize applies to gaussian data only".into()));
    }
    Ok(family)
}

fn load_training_data(path: &Path, args: &DataArgs) -> Result<(Dataset, Option<Standardization>), CliError> {
    let family = family_of(args)?;
    let table = read_table(path, false)?;
    if table.rows.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let mut rows = table.matrix(0);
    let standardization = if args.standardize {
        let s = Standardization::fit(rows.view())?;
        rows = s.apply(rows.view())?;
        Some(s)
    } else {
        None
    };
    Ok((to_dataset(rows, family, path)?, standardization))
}

fn load_sequences(path: &Path, args: &DataArgs) -> Result<(SequenceDataset, Option<Standardization>), CliError> {
    let family = family_of(args)?;
    let sequences = read_sequences(path, family)?;
    if !args.standardize {
        return Ok((sequences, None));
    }
    let views: Vec<ArrayView2<f64>> = sequences.sequences().iter().map(Dataset::rows).collect();
    let all = ndarray::concatenate(Axis(0), &views).map_err(|e| CliError::Data(e.to_string()))?;
    let s = Standardization::fit(all.view())?;
    let scaled = sequences
        .sequences()
        .iter()
        .map(|seq| Ok(Dataset::new(s.apply(seq.rows())?, family)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok((SequenceDataset::new(scaled)?, Some(s)))
}

fn write_report(out: &Path, lines: &[Value]) -> Result<PathBuf, CliError> {
    let path = report_path(out);
    let mut text = String::new();
    for line in lines {
        text.push_str(&line.to_string());
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn report_lines(report: &TrainReport, stage: Value) -> Vec<Value> {
    report
        .epochs
        .iter()
        .map(|record| {
            let mut v = serde_json::to_value(record).expect("records serialize");
            if !stage.is_null() {
                v["stage"] = stage.clone();
            }
            v
        })
        .collect()
}

fn summarize(label: &str, report: &TrainReport) {
    match (report.first(), report.last()) {
        (Some(first), Some(last)) => eprintln!(
            "{label}: {} epochs, reconstruction error {:.6} -> {:.6}",
            report.epochs.len(),
            first.recon_error,
            last.recon_error
        ),
        _ => eprintln!("{label}: no epochs run"),
    }
}

fn save(out: &Path, model: Model, standardization: Option<Standardization>) -> Result<(), CliError> {
    save_model(out, &ModelFile { model, standardization }).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

pub fn train(cmd: &TrainCmd) -> Result<RunInfo, CliError> {
    let config = cmd.hyper.config();
    let hidden_family: UnitFamily = cmd.hidden_family.into();
    let (model, report, standardization) = match cmd.kind {
        TrainKind::Rbm => {
            let (data, s) = load_training_data(&cmd.data, &cmd.data_args)?;
            let (params, report) = trainer::train_rbm(&config, cmd.hidden, hidden_family, &data)?;
            (Model::Rbm(params), report, s)
        }
        TrainKind::Bm => {
            if cmd.data_args.family != crate::args::FamilyArg::Binary || hidden_family != UnitFamily::Binary {
                return Err(CliError::Usage("Boltzmann machines take binary visible and hidden units".into()));
            }
            let (data, s) = load_training_data(&cmd.data, &cmd.data_args)?;
            let options = BmOptions { learn_lateral: !cmd.no_lateral, clamped_sweeps: cmd.clamped_sweeps };
            let (params, report) = trainer::train_bm(&config, cmd.hidden, &data, &options)?;
            (Model::Bm(params), report, s)
        }
        TrainKind::Crbm => {
            let (sequences, s) = load_sequences(&cmd.data, &cmd.data_args)?;
            let options = CrbmOptions { history_len: cmd.history, learn_history: !cmd.no_history_links };
            let (params, report) = crbm::train_crbm(&config, cmd.hidden, hidden_family, &sequences, &options)?;
            (Model::Crbm(params), report, s)
        }
    };
    summarize(&format!("train {}", model.kind()), &report);
    save(&cmd.out, model, standardization)?;
    let report_file = write_report(&cmd.out, &report_lines(&report, Value::Null))?;
    Ok(RunInfo {
        inputs: vec![cmd.data.clone()],
        outputs: vec![cmd.out.clone(), report_file],
        seed: Some(config.seed),
        failure: None,
    })
}

fn dbn_spec(layers: &[usize], hidden_family: UnitFamily, data: &Dataset) -> Result<DbnSpec, CliError> {
    let spec = DbnSpec { layer_sizes: layers.to_vec(), hidden_families: vec![hidden_family; layers.len().saturating_sub(1)] };
    spec.validate().map_err(|e| CliError::Data(format!("--layers: {e}")))?;
    if layers[0] != data.d() {
        return Err(CliError::Data(format!(
            "--layers starts with {} but the data has {} columns",
            layers[0],
            data.d()
        )));
    }
    Ok(spec)
}

pub fn pretrain_dbn(cmd: &PretrainCmd) -> Result<RunInfo, CliError> {
    let config = cmd.hyper.config();
    let (data, standardization) = load_training_data(&cmd.data, &cmd.data_args)?;
    let spec = dbn_spec(&cmd.layers, cmd.hidden_family.into(), &data)?;
    let (stack, reports) = dbn::pretrain_with_reports(&spec, &data, &config, cmd.propagation.into())?;
    let mut lines = vec![];
    for (l, report) in reports.iter().enumerate() {
        summarize(&format!("pretrain stage {l}"), report);
        lines.extend(report_lines(report, json!(l)));
    }
    save(&cmd.out, Model::Dbn(stack), standardization)?;
    let report_file = write_report(&cmd.out, &lines)?;
    Ok(RunInfo {
        inputs: vec![cmd.data.clone()],
        outputs: vec![cmd.out.clone(), report_file],
        seed: Some(config.seed),
        failure: None,
    })
}

pub fn finetune_dbn(cmd: &FinetuneCmd) -> Result<RunInfo, CliError> {
    let config = cmd.hyper.config();
    let pre_config = boltzmann::TrainConfig {
        max_epochs: cmd.pretrain_epochs.unwrap_or(config.max_epochs),
        learning_rate: cmd.pretrain_lr.unwrap_or(config.learning_rate),
        ..config.clone()
    };
    let mut inputs = vec![cmd.data.clone()];
    let mut lines = vec![];
    let (mlp, data, standardization) = match (&cmd.init, &cmd.layers) {
        (Some(init), _) => {
            inputs.push(init.clone());
            let file = load_model(init).map_err(|e| CliError::Data(format!("{}: {e}", init.display())))?;
            let mlp = match &file.model {
                Model::Dbn(stack) => dbn::unroll_autoencoder(stack)?,
                Model::Mlp(mlp) => mlp.clone(),
                other => return Err(CliError::Data(format!("--init needs a dbn or mlp file, got {}", other.kind()))),
            };
            let table = read_table(&cmd.data, false)?;
            let mut rows = table.matrix(0);
            if let Some(s) = &file.standardization {
                rows = s.apply(rows.view())?;
            }
            let data = to_dataset(rows, file.model.visible_family(), &cmd.data)?;
            (mlp, data, file.standardization)
        }
        (None, Some(layers)) => {
            let (data, s) = load_training_data(&cmd.data, &cmd.data_args)?;
            let spec = dbn_spec(layers, cmd.hidden_family.into(), &data)?;
            let mlp = if cmd.random_init {
                dbn::random_autoencoder(&spec, data.family(), &pre_config)?
            } else {
                let (stack, reports) = dbn::pretrain_with_reports(&spec, &data, &pre_config, cmd.propagation.into())?;
                for (l, report) in reports.iter().enumerate() {
                    summarize(&format!("pretrain stage {l}"), report);
                    lines.extend(report_lines(report, json!(l)));
                }
                dbn::unroll_autoencoder(&stack)?
            };
            (mlp, data, s)
        }
        (None, None) => return Err(CliError::Usage("finetune-dbn needs --init or --layers".into())),
    };
    if data.n() == 0 {
        return Err(CliError::Data(format!("{}: no data rows", cmd.data.display())));
    }
    let before = mlp.mse(data.rows())?;
    let (tuned, report) = dbn::finetune(&mlp, &data, &config)?;
    eprintln!("finetune: mse {before:.6} -> {:.6} over {} epochs", tuned.mse(data.rows())?, report.epochs.len());
    lines.extend(report_lines(&report, json!("finetune")));
    save(&cmd.out, Model::Mlp(tuned), standardization)?;
    let report_file = write_report(&cmd.out, &lines)?;
    Ok(RunInfo { inputs, outputs: vec![cmd.out.clone(), report_file], seed: Some(config.seed), failure: None })
}

fn load(path: &Path) -> Result<ModelFile, CliError> {
    load_model(path).map_err(|e| match e {
        boltzmann::Error::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

fn dbn_samples(stack: &dbn::DbnStack, cmd: &SampleCmd, rng: &mut impl rand::Rng) -> Result<Array2<f64>, CliError> {
    let (top, below) = stack.layers.split_last().expect("stack is non-empty");
    let mut rows = gibbs::generate(top, cmd.n, cmd.burn_in, cmd.thin, rng)?.into_rows();
    for layer in below.iter().rev() {
        let mut below = Array2::zeros((rows.nrows(), layer.d()));
        for (h, mut v) in rows.rows().into_iter().zip(below.rows_mut()) {
            v.assign(&gibbs::sample_visible(layer, h, rng));
        }
        rows = below;
    }
    Ok(rows)
}

fn crbm_samples(params: &crbm::CrbmParams, cmd: &SampleCmd, file: &ModelFile, rng: &mut impl rand::Rng) -> Result<(Array2<f64>, PathBuf), CliError> {
    let context = cmd.context.clone().ok_or_else(|| CliError::Usage("sampling a crbm needs --context".into()))?;
    let table = read_table(&context, false)?;
    let t = params.history_len();
    if table.rows.len() < t {
        return Err(CliError::Data(format!("{}: need at least {t} context rows, found {}", context.display(), table.rows.len())));
    }
    let mut rows = table.matrix(params.base.d());
    if let Some(s) = &file.standardization {
        rows = s.apply(rows.view())?;
    }
    let frames: Vec<Array1<f64>> = rows.rows().into_iter().rev().take(t).map(|r| r.to_owned()).collect();
    let history = History::new(frames)?;
    let generated = crbm::generate_sequence(params, &history, cmd.n, cmd.k, rng)?;
    let mut out = Array2::zeros((generated.len(), params.base.d()));
    for (frame, mut row) in generated.iter().zip(out.rows_mut()) {
        row.assign(frame);
    }
    Ok((out, context))
}

pub fn sample(cmd: &SampleCmd) -> Result<RunInfo, CliError> {
    let file = load(&cmd.model)?;
    let mut rng = RngStream::new(cmd.seed, 0).rng();
    let mut inputs = vec![cmd.model.clone()];
    let rows = match &file.model {
        Model::Rbm(params) => gibbs::generate(params, cmd.n, cmd.burn_in, cmd.thin, &mut rng)?.into_rows(),
        Model::Bm(params) => gibbs::generate_bm(params, cmd.n, cmd.burn_in, cmd.thin, &mut rng)?.into_rows(),
        Model::Dbn(stack) => dbn_samples(stack, cmd, &mut rng)?,
        Model::Crbm(params) => {
            let (rows, context) = crbm_samples(params, cmd, &file, &mut rng)?;
            inputs.push(context);
            rows
        }
        Model::Mlp(_) => return Err(CliError::Data("an mlp is deterministic; use reconstruct".into())),
    };
    let rows = match &file.standardization {
        Some(s) => s.invert(rows.view())?,
        None => rows,
    };
    write_table(&cmd.out, "v", rows.view())?;
    eprintln!("sample: wrote {} rows to {}", rows.nrows(), cmd.out.display());
    Ok(RunInfo { inputs, outputs: vec![cmd.out.clone()], seed: Some(cmd.seed), failure: None })
}

fn transform_input(cmd: &TransformCmd, file: &ModelFile) -> Result<Array2<f64>, CliError> {
    let d = file.model.d();
    let table = read_table(&cmd.data, false)?;
    if table.width(d) != d {
        return Err(CliError::Data(format!(
            "{}: {} columns, model expects {d}",
            cmd.data.display(),
            table.width(d)
        )));
    }
    let mut rows = table.matrix(d);
    if let Some(s) = &file.standardization {
        rows = s.apply(rows.view())?;
    }
    Ok(to_dataset(rows, file.model.visible_family(), &cmd.data)?.into_rows())
}

fn map_rows(rows: ArrayView2<f64>, width: usize, f: impl Fn(ndarray::ArrayView1<f64>) -> boltzmann::Result<Array1<f64>>) -> Result<Array2<f64>, CliError> {
    let mut out = Array2::zeros((rows.nrows(), width));
    for (x, mut y) in rows.rows().into_iter().zip(out.rows_mut()) {
        y.assign(&f(x)?);
    }
    Ok(out)
}

fn mlp_of(model: &Model) -> Result<Option<Mlp>, CliError> {
    Ok(match model {
        Model::Dbn(stack) => Some(dbn::unroll_autoencoder(stack)?),
        Model::Mlp(mlp) => Some(mlp.clone()),
        _ => None,
    })
}

pub fn encode(cmd: &TransformCmd) -> Result<RunInfo, CliError> {
    let file = load(&cmd.model)?;
    let rows = transform_input(cmd, &file)?;
    let codes = match &file.model {
        Model::Rbm(params) => map_rows(rows.view(), params.p(), |v| units::cond_mean_hidden(params, v))?,
        Model::Dbn(stack) => stack.propagate_up(rows.view())?,
        Model::Mlp(mlp) => mlp.encode(rows.view())?,
        other => return Err(CliError::Data(format!("encode supports rbm, dbn and mlp files, got {}", other.kind()))),
    };
    write_table(&cmd.out, "h", codes.view())?;
    Ok(RunInfo { inputs: vec![cmd.model.clone(), cmd.data.clone()], outputs: vec![cmd.out.clone()], seed: None, failure: None })
}

pub fn reconstruct(cmd: &TransformCmd) -> Result<RunInfo, CliError> {
    let file = load(&cmd.model)?;
    let rows = transform_input(cmd, &file)?;
    let out = match (&file.model, mlp_of(&file.model)?) {
        (_, Some(mlp)) => mlp.reconstruct(rows.view())?,
        (Model::Rbm(params), None) => map_rows(rows.view(), params.d(), |v| {
            let h = units::cond_mean_hidden(params, v)?;
            units::cond_mean_visible(params, h.view())
        })?,
        (other, None) => {
            return Err(CliError::Data(format!("reconstruct supports rbm, dbn and mlp files, got {}", other.kind())))
        }
    };
    if rows.nrows() > 0 {
        eprintln!("reconstruct: mse {:.6}", (&out - &rows).mapv(|e| e * e).mean().unwrap_or(0.0));
    }
    let out = match &file.standardization {
        Some(s) => s.invert(out.view())?,
        None => out,
    };
    write_table(&cmd.out, "v", out.view())?;
    Ok(RunInfo { inputs: vec![cmd.model.clone(), cmd.data.clone()], outputs: vec![cmd.out.clone()], seed: None, failure: None })
}

pub fn oracle_check(cmd: &OracleCheckCmd) -> Result<RunInfo, CliError> {
    let file = load(&cmd.model)?;
    let (d, p) = (file.model.d(), file.model.p());
    if d + p > ENUMERATION_CAP {
        return Err(boltzmann::Error::Capacity { bits: d + p, cap: ENUMERATION_CAP }.into());
    }
    let mut inputs = vec![cmd.model.clone()];
    let data = match &cmd.data {
        Some(path) => {
            inputs.push(path.clone());
            let table = read_table(path, false)?;
            if table.rows.is_empty() {
                return Err(CliError::Data(format!("{}: no data rows", path.display())));
            }
            to_dataset(table.matrix(0), UnitFamily::Binary, path)?
        }
        None => Dataset::new(all_visible(d), UnitFamily::Binary)?,
    };
    let records = match &file.model {
        Model::Rbm(params) => check::check_rbm(params, &data)?,
        Model::Bm(params) => check::check_bm(params, &data)?,
        other => return Err(CliError::Data(format!("oracle-check supports rbm and bm files, got {}", other.kind()))),
    };
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
        eprintln!("{:<28} {}  max error {:.3e} (tolerance {:.0e})", r.check, if r.passed { "pass" } else { "FAIL" }, r.max_error, r.tolerance);
    }
    print!("{text}");
    let mut outputs = vec![];
    if let Some(out) = &cmd.out {
        fs::write(out, &text).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        outputs.push(out.clone());
    }
    let failed: Vec<&str> = records.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    let failure = (!failed.is_empty()).then(|| CliError::Check(failed.join(", ")));
    Ok(RunInfo { inputs, outputs, seed: None, failure })
}
