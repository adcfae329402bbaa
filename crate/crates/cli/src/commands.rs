use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use modunwrap::data::{
    export_plot_data, load_dataset, load_stew, save_dataset, subject_id_from_path, synth_generate, DataSource, Dataset,
    DatasetManifest, LabeledWindow, SubjectEntry, NORMALIZATION_TAG,
};
use modunwrap::model::{load_model, save_model, ModelMeta};
use modunwrap::signal::FoldedWindow;
use modunwrap::train::{
    dataset_topology, gradcheck as run_gradcheck, paired_ttest, recover_baseline, recover_model, score,
    train as run_train, GradcheckConfig, Method, Metrics, Recovery,
};
use modunwrap::{Real, RealDataset};

use crate::settings::Settings;
use crate::Common;

/// Bad flags or config; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// `<path>.repro` for file outputs, `<dir>/repro.txt` for directories.
fn repro_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("repro.txt")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".repro");
        PathBuf::from(s)
    }
}

/// Config echo, seed, version and arguments written beside every output.
fn write_repro(
    out: &Path,
    command: &str,
    argv: &[String],
    seed: Option<u64>,
    settings: &Settings,
) -> anyhow::Result<()> {
    let mut text = format!("# modunwrap {}\ncommand = {command}\n", env!("CARGO_PKG_VERSION"));
    writeln!(text, "args = {}", argv.join(" "))?;
    if let Some(seed) = seed {
        writeln!(text, "seed = {seed}")?;
    }
    text.push_str(&settings.to_text());
    let path = repro_path(out);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_folded(path: &Path) -> anyhow::Result<RealDataset> {
    let ds: RealDataset = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    if ds.lambda.is_none() {
        bail!("{} holds an unfolded dataset; run `fold` first", path.display());
    }
    Ok(ds)
}

fn select<'a>(
    ds: &'a RealDataset,
    settings: &Settings,
    subjects: &str,
) -> anyhow::Result<Vec<&'a LabeledWindow<Real>>> {
    if subjects == "all" {
        return Ok(ds.windows.iter().collect());
    }
    let plan = settings.split.plan(&ds.subjects())?;
    let ids = match subjects {
        "test" => plan.test,
        "val" => plan.val,
        "train" => plan.train_subjects(None)?,
        other => return usage(format!("--subjects: expected all, train, val or test, got `{other}`")),
    };
    Ok(ds.windows_of(&ids))
}

fn parse_method(s: &str) -> anyhow::Result<Method> {
    s.parse::<Method>().or_else(|e| usage(format!("--method: {e}")))
}

/// Stores reconstructions as a folded container: `x` holds `x̂`, `z` the
/// predicted fold counts, `p` the observation.
fn prediction_dataset(
    ds: &RealDataset,
    windows: &[&LabeledWindow<Real>],
    recs: Vec<Recovery<Real>>,
) -> anyhow::Result<RealDataset> {
    let lambda = ds.lambda()?;
    let mut out = Vec::with_capacity(recs.len());
    for (w, r) in windows.iter().zip(recs) {
        let p = w.observation()?.p().clone();
        out.push(LabeledWindow {
            subject_id: w.subject_id.clone(),
            window_index: w.window_index,
            x: r.x_hat,
            folded: Some(FoldedWindow::new(p, lambda, Some(r.z_hat))?),
        });
    }
    Ok(Dataset {
        t_len: ds.t_len,
        channels: ds.channels,
        lambda: Some(lambda),
        windows: out,
    })
}

pub fn synth(common: &Common, seed: Option<u64>, out: &Path, argv: &[String]) -> anyhow::Result<ExitCode> {
    let mut settings = Settings::load(common)?;
    if let Some(seed) = seed {
        settings.synth.seed = seed;
    }
    settings
        .synth
        .validate()
        .map_err(|e| UsageError(format!("synth config: {e}")))?;
    let recs = synth_generate(&settings.synth)?;
    let ds = Dataset::from_recordings(&recs, settings.window_len)?;
    save_dataset(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    write_repro(out, "synth", argv, Some(settings.synth.seed), &settings)?;
    println!(
        "{} subjects, {} windows of {}x{} -> {}",
        settings.synth.num_subjects,
        ds.len(),
        ds.t_len,
        ds.channels,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn fold(common: &Common, data: &Path, lambda: f64, out: &Path, argv: &[String]) -> anyhow::Result<ExitCode> {
    let settings = Settings::load(common)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return usage(format!("--lambda must be positive, got {lambda}"));
    }
    let (base, manifest) = if data.is_dir() {
        let recs = load_stew::<Real>(data)?;
        let ds = Dataset::from_recordings(&recs, settings.window_len)?;
        let mut files: Vec<PathBuf> = fs::read_dir(data)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        let manifest = DatasetManifest {
            source: DataSource::Stew,
            subjects: files
                .into_iter()
                .map(|path| SubjectEntry::File {
                    subject_id: subject_id_from_path(&path),
                    path,
                })
                .collect(),
            lambda,
            t_len: ds.t_len,
            channels: ds.channels,
            k: settings.train.k,
            normalization: NORMALIZATION_TAG.to_string(),
        };
        (ds, Some(manifest))
    } else {
        (
            load_dataset::<Real>(data).with_context(|| format!("reading {}", data.display()))?,
            None,
        )
    };
    let folded = base.fold(lambda)?;
    save_dataset(&folded, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(m) = manifest {
        let mut path = out.as_os_str().to_owned();
        path.push(".manifest");
        fs::write(PathBuf::from(path), m.to_text())?;
    }
    write_repro(out, "fold", argv, None, &settings)?;
    let wrapped = folded
        .windows
        .iter()
        .filter_map(|w| w.z().ok())
        .flat_map(|z| z.iter())
        .filter(|&&z| z != 0)
        .count();
    let nodes = folded.len() * folded.t_len * folded.channels;
    println!(
        "folded {} windows at λ = {lambda}: {:.1}% of samples wrapped -> {}",
        folded.len(),
        100.0 * wrapped as f64 / nodes.max(1) as f64,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub no_pgfi: bool,
    pub fold: Option<usize>,
    pub epochs: Option<usize>,
    pub out: &'a Path,
}

fn metrics_text(m: &Metrics) -> String {
    format!(
        "windows = {}\nnodes = {}\naccuracy = {}\nl1 = {}\nmse = {}\noffset_mse = {}\nr = {}\n",
        m.per_window.len(),
        m.nodes,
        m.accuracy,
        m.l1,
        m.mse,
        m.offset_mse,
        m.r.map_or("nan".to_string(), |r| r.to_string())
    )
}

pub fn train(common: &Common, a: TrainArgs<'_>, argv: &[String]) -> anyhow::Result<ExitCode> {
    let mut settings = Settings::load(common)?;
    let ds = load_folded(a.data)?;
    let data_lambda = ds.lambda()?;
    if let Some(l) = a.lambda {
        if (l - data_lambda).abs() > 1e-12 {
            return usage(format!("--lambda {l} does not match the container's λ = {data_lambda}"));
        }
    }
    settings.train.lambda = data_lambda;
    if let Some(seed) = a.seed {
        settings.train.seed = seed;
    }
    if let Some(e) = a.epochs {
        settings.train.epochs = e;
    }
    if a.no_pgfi {
        settings.train.model.pgfi_enabled = false;
    }
    settings
        .train
        .validate()
        .map_err(|e| UsageError(format!("train config: {e}")))?;
    let plan = settings.split.plan(&ds.subjects())?;
    if let Some(f) = a.fold {
        if f >= plan.folds.len() {
            return usage(format!("--fold {f}: only {} folds", plan.folds.len()));
        }
    }

    fs::create_dir_all(a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = run_train(&ds, &plan, a.fold, &settings.train, common.threads)?;
    save_model(
        &outcome.net,
        ModelMeta {
            lambda: settings.train.lambda,
            k: settings.train.k,
        },
        &a.out.join("model.mrcp"),
    )?;
    fs::write(a.out.join("history.tsv"), outcome.history.to_tsv())?;
    let mut summary = format!(
        "best_epoch = {}\nclipped_targets = {}\npgfi = {}\n",
        outcome.best_epoch, outcome.clipped_targets, settings.train.model.pgfi_enabled
    );
    if let Some(val) = outcome
        .history
        .epochs
        .iter()
        .find(|e| e.epoch == outcome.best_epoch)
        .and_then(|e| e.val.as_ref())
    {
        for line in metrics_text(val).lines() {
            writeln!(summary, "val_{line}")?;
        }
    }
    fs::write(a.out.join("summary.txt"), &summary)?;
    write_repro(a.out, "train", argv, Some(settings.train.seed), &settings)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

pub fn recover(
    common: &Common,
    data: &Path,
    method: &str,
    model: Option<&Path>,
    subjects: &str,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<ExitCode> {
    let settings = Settings::load(common)?;
    let method = parse_method(method)?;
    let ds = load_folded(data)?;
    let windows = select(&ds, &settings, subjects)?;
    let recs = if method == Method::Model {
        let Some(model) = model else {
            return usage("--model is required with --method model");
        };
        let (net, meta) = load_model::<Real>(model).with_context(|| format!("reading {}", model.display()))?;
        if (meta.lambda - ds.lambda()?).abs() > 1e-12 {
            bail!(
                "model was trained at λ = {} but the data is folded at λ = {}",
                meta.lambda,
                ds.lambda()?
            );
        }
        let topology = dataset_topology(&ds, meta.k)?;
        recover_model(&net, &windows, &topology, common.threads)?
    } else {
        let topology = dataset_topology(&ds, settings.train.k)?;
        recover_baseline(&windows, &topology, method, settings.baseline, common.threads)?
    };
    let pred = prediction_dataset(&ds, &windows, recs)?;
    save_dataset(&pred, out).with_context(|| format!("writing {}", out.display()))?;
    write_repro(out, "recover", argv, None, &settings)?;
    println!("{} windows reconstructed -> {}", pred.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

type Paired<'a> = (Vec<&'a LabeledWindow<Real>>, Vec<Recovery<Real>>);

/// Ground-truth windows matching each prediction, plus the predictions as
/// reconstructions.
fn pair_up<'a>(truth: &'a RealDataset, pred: &RealDataset) -> anyhow::Result<Paired<'a>> {
    let index: HashMap<(&str, usize), &LabeledWindow<Real>> = truth
        .windows
        .iter()
        .map(|w| ((w.subject_id.as_str(), w.window_index), w))
        .collect();
    let mut windows = Vec::with_capacity(pred.len());
    let mut recs = Vec::with_capacity(pred.len());
    for p in &pred.windows {
        let Some(&w) = index.get(&(p.subject_id.as_str(), p.window_index)) else {
            bail!(
                "prediction for window {} of {} has no ground truth",
                p.window_index,
                p.subject_id
            );
        };
        windows.push(w);
        recs.push(Recovery {
            x_hat: p.x.clone(),
            z_hat: p.z()?.clone(),
        });
    }
    Ok((windows, recs))
}

fn window_rows(m: &Metrics) -> String {
    let mut s = String::from("subject\twindow\taccuracy\tl1\tmse\toffset_mse\tr\n");
    for w in &m.per_window {
        let r = w.r.map_or("nan".to_string(), |r| r.to_string());
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{r}",
            w.subject_id, w.window_index, w.accuracy, w.l1, w.mse, w.offset_mse
        )
        .unwrap();
    }
    s
}

pub fn eval(
    common: &Common,
    data: &Path,
    pred: &Path,
    compare: Option<&Path>,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<ExitCode> {
    let settings = Settings::load(common)?;
    let truth = load_folded(data)?;
    let p = load_folded(pred)?;
    let (windows, recs) = pair_up(&truth, &p)?;
    let m = score(&windows, &recs)?;
    let mut summary = metrics_text(&m);
    if let Some(other) = compare {
        let o = load_folded(other)?;
        let (ow, orecs) = pair_up(&truth, &o)?;
        let same = ow.len() == windows.len() && ow.iter().zip(&windows).all(|(a, b)| std::ptr::eq(*a, *b));
        if !same {
            bail!("{} and {} cover different windows", pred.display(), other.display());
        }
        let om = score(&ow, &orecs)?;
        let t = paired_ttest(&m.window_mse(), &om.window_mse())?;
        write!(
            summary,
            "compare_mse = {}\ncompare_accuracy = {}\nttest_t = {}\nttest_df = {}\nttest_p = {}\n",
            om.mse, om.accuracy, t.t, t.df, t.p_value
        )?;
    }
    fs::write(out, &summary).with_context(|| format!("writing {}", out.display()))?;
    let mut rows = out.as_os_str().to_owned();
    rows.push(".windows.tsv");
    fs::write(PathBuf::from(rows), window_rows(&m))?;
    write_repro(out, "eval", argv, None, &settings)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

pub fn baseline(
    common: &Common,
    data: &Path,
    method: Option<&str>,
    subjects: &str,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<ExitCode> {
    let settings = Settings::load(common)?;
    let methods = match method {
        Some(m) => match parse_method(m)? {
            Method::Model => return usage("--method: baseline runs itoh, mrf or sparse"),
            m => vec![(m, m_name(m))],
        },
        None => vec![(Method::Itoh, "itoh"), (Method::Mrf, "mrf"), (Method::Sparse, "sparse")],
    };
    let ds = load_folded(data)?;
    let windows = select(&ds, &settings, subjects)?;
    let topology = dataset_topology(&ds, settings.train.k)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut table = String::from("method\taccuracy\tl1\tmse\toffset_mse\tr\n");
    for (method, name) in methods {
        let recs = recover_baseline(&windows, &topology, method, settings.baseline, common.threads)?;
        let m = score(&windows, &recs)?;
        writeln!(
            table,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            m.accuracy,
            m.l1,
            m.mse,
            m.offset_mse,
            m.r.map_or("nan".to_string(), |r| r.to_string())
        )?;
        let pred = prediction_dataset(&ds, &windows, recs)?;
        save_dataset(&pred, &out.join(format!("{name}.modr")))?;
        fs::write(out.join(format!("{name}.windows.tsv")), window_rows(&m))?;
    }
    fs::write(out.join("baselines.tsv"), &table)?;
    write_repro(out, "baseline", argv, None, &settings)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn m_name(m: Method) -> &'static str {
    match m {
        Method::Itoh => "itoh",
        Method::Mrf => "mrf",
        Method::Sparse => "sparse",
        Method::Model => "model",
    }
}

pub fn gradcheck(common: &Common, seed: u64, out: Option<&Path>, argv: &[String]) -> anyhow::Result<ExitCode> {
    const TOLERANCE: f64 = 1e-4;
    let settings = Settings::load(common)?;
    let cfg = GradcheckConfig {
        seed,
        ..GradcheckConfig::default()
    };
    let r = run_gradcheck(&cfg)?;
    let text = format!(
        "checked = {}\nmax_rel_error = {:e}\nmax_abs_error = {:e}\nworst = {}[{}]\nanalytic = {:e}\nnumeric = {:e}\npass = {}\n",
        r.checked,
        r.max_rel_error,
        r.max_abs_error,
        r.worst.0,
        r.worst.1,
        r.analytic,
        r.numeric,
        r.max_rel_error < TOLERANCE
    );
    if let Some(out) = out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
        write_repro(out, "gradcheck", argv, Some(seed), &settings)?;
    }
    print!("{text}");
    Ok(if r.max_rel_error < TOLERANCE {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

pub fn export_plot(
    common: &Common,
    data: &Path,
    pred: &Path,
    window: usize,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<ExitCode> {
    let settings = Settings::load(common)?;
    let truth = load_folded(data)?;
    let p = load_folded(pred)?;
    let (windows, recs) = pair_up(&truth, &p)?;
    if window >= windows.len() {
        return usage(format!("--window {window}: prediction holds {} windows", windows.len()));
    }
    let w = windows[window];
    export_plot_data(&w.x, &recs[window].x_hat, w.observation()?.p(), out)
        .with_context(|| format!("writing {}", out.display()))?;
    write_repro(out, "export-plot", argv, None, &settings)?;
    println!("window {} of {} -> {}", w.window_index, w.subject_id, out.display());
    Ok(ExitCode::SUCCESS)
}
