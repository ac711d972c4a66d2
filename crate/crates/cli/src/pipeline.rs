//! Stage implementations and the runner that sequences them.
//!
//! Stages communicate only through files in the output directory, so any
//! stage can be rerun on its own once its inputs exist:
//!
//! | stage    | reads                                   | writes                              |
//! |----------|-----------------------------------------|-------------------------------------|
//! | gen-data | config (or `data.path`)                 | `data.bin`, `pde_dataset.json`, `test_cases.json` |
//! | prior    | `data.bin`                              | `normalization.json`, `prior.json`  |
//! | sample   | prior files                             | `samples.csv`                       |
//! | label    | prior files                             | `labeled.bin`                       |
//! | train    | `labeled.bin`, `normalization.json`     | `model.ckpt`, `loss.csv`            |
//! | infer    | `model.ckpt`                            | `nn_samples.csv`                    |
//! | eval     | samples and references                  | `eval.json` and CSV tables          |

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use esd_core::amortized::{read_checkpoint, sample_amortized, train_amortized, write_checkpoint, write_loss_csv};
use esd_core::elliptic::{build_pde_dataset, ObservationSpec, PdeDataset, PermeabilityCoefficients};
use esd_core::eval::{write_kl_reports_csv, KlReport};
use esd_core::gmm_prior::{
    build_spherical_prior, load_joint_dataset, nearest_neighbor_bandwidth, write_joint_dataset, zscore_normalize,
    DatasetFormat, JointDataset, NormalizationStats,
};
use esd_core::reverse_ode::{
    generate_labeled_dataset, read_labeled_dataset, sample_posterior, write_labeled_dataset, ResampledObservations,
};
use esd_core::rng::derive_seed;
use esd_core::synthetic::{bimodal_joint_samples, two_mode_joint_samples};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, ExperimentId, Stage};
use crate::experiments::{
    bimodal_errors, identity_stats, log_log_slope, recovery_summary, two_mode_errors, write_bimodal_densities,
    BimodalErrors, Problem, RecoverySummary, TwoModeErrors,
};
use crate::manifest::{Manifest, StageOutputs, MANIFEST_FILE};

pub const DATA_FILE: &str = "data.bin";
pub const PDE_FILE: &str = "pde_dataset.json";
pub const TEST_CASES_FILE: &str = "test_cases.json";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const PRIOR_FILE: &str = "prior.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const LABELED_FILE: &str = "labeled.bin";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const NN_SAMPLES_FILE: &str = "nn_samples.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const CONVERGENCE_SUMMARY_FILE: &str = "convergence.json";

/// Variances actually used to build the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub k: usize,
    pub d_u: usize,
    pub d_v: usize,
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    pub sigma_y2: f64,
    /// Nearest-neighbour heuristic on the (normalized) data, when computed.
    pub nn_bandwidth: Option<f64>,
}

/// Held-out ground truths of the elliptic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCases {
    pub coefficients: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalEvalRow {
    pub source: String,
    pub y: f64,
    pub errors: BimodalErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeEvalRow {
    pub source: String,
    pub y: Vec<f64>,
    pub errors: TwoModeErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticEvalRow {
    pub case: usize,
    pub source: String,
    pub summary: RecoverySummary,
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum EvalReport {
    Bimodal { rows: Vec<BimodalEvalRow> },
    Gmm20d { rows: Vec<TwoModeEvalRow> },
    Elliptic { rows: Vec<EllipticEvalRow> },
    Custom { sources: Vec<SampleSummary> },
}

/// Moments of generated samples, used where no reference density exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub source: String,
    pub y_index: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Executes stages for one config, tracking outputs in a manifest.
pub struct Pipeline {
    cfg: ExperimentConfig,
    dir: PathBuf,
    manifest: Manifest,
}

impl Pipeline {
    /// Continues the manifest already in the output directory when it was
    /// written for the same config; starts a fresh one otherwise.
    pub fn open(command: &str, cfg: ExperimentConfig) -> Result<Self> {
        let dir = cfg.out_dir.clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let existing = dir.join(MANIFEST_FILE);
        let manifest = match Manifest::read(&existing) {
            Ok(m) if m.config == cfg && command != "run" => Manifest { command: command.into(), ..m },
            _ => Manifest::new(command, cfg.clone()),
        };
        Ok(Self { cfg, dir, manifest })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Seed of `stage` under the top-level seed, recorded in the manifest.
    pub fn stage_seed(&mut self, stage: &str) -> u64 {
        let seed = derive_seed(self.cfg.seed, &format!("stage/{stage}"));
        self.manifest.stage_seeds.insert(stage.into(), seed);
        seed
    }

    /// Runs the configured stage list and writes the manifest.
    pub fn run_all(&mut self) -> Result<PathBuf> {
        for stage in self.cfg.stages.clone() {
            self.run_stage(stage)?;
        }
        self.finish()
    }

    pub fn finish(&mut self) -> Result<PathBuf> {
        self.manifest.write(&self.dir)
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        self.guarded(stage.name(), |p, out| match stage {
            Stage::GenData => p.gen_data(out),
            Stage::Prior => p.prior(out),
            Stage::Sample => p.sample(out),
            Stage::Label => p.label(out),
            Stage::Train => p.train(out),
            Stage::Infer => p.infer(out),
            Stage::Eval => p.eval(out),
        })
    }

    /// Runs `body` as stage `name`: outputs are published on success, and on
    /// failure left behind with a `.partial` suffix while the manifest records
    /// the failing stage.
    fn guarded(&mut self, name: &str, body: impl FnOnce(&mut Self, &mut StageOutputs) -> Result<()>) -> Result<()> {
        log::info!("stage {name}: start");
        let mut out = StageOutputs::new(&self.dir, name);
        match body(self, &mut out) {
            Ok(()) => {
                out.commit(&mut self.manifest)?;
                log::info!("stage {name}: done");
                Ok(())
            }
            Err(e) => {
                self.manifest.status = format!("failed: {name}");
                let _ = self.manifest.write(&self.dir);
                Err(e.context(format!("stage `{name}` failed")))
            }
        }
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        ensure!(path.is_file(), "missing input `{}`; run the stage that produces it first", path.display());
        Ok(path)
    }

    // ---- gen-data -------------------------------------------------------

    fn gen_data(&mut self, out: &mut StageOutputs) -> Result<()> {
        let seed = self.stage_seed("gen-data");
        let cfg = &self.cfg;
        let data = match (cfg.experiment, cfg.data.source) {
            (_, DataSource::File) => {
                let path = Path::new(&cfg.data.path);
                let format = match cfg.data.format.as_str() {
                    "auto" => DatasetFormat::from_path(path),
                    other => other.parse()?,
                };
                load_joint_dataset(path, format).with_context(|| format!("loading {}", path.display()))?
            }
            (ExperimentId::Bimodal, _) => {
                let b = cfg.bimodal.as_ref().ok_or_else(|| anyhow!("missing [bimodal] section"))?;
                bimodal_joint_samples(cfg.data.k, b.noise_var, seed)?
            }
            (ExperimentId::Gmm20d, _) => {
                let g = cfg.gmm20d.as_ref().ok_or_else(|| anyhow!("missing [gmm20d] section"))?;
                let mu2: Vec<f64> = g.mu1.iter().map(|m| -m).collect();
                two_mode_joint_samples(cfg.data.k, &g.mu1, &mu2, g.d_u, seed)?
            }
            (ExperimentId::Elliptic, _) => {
                let e = cfg.elliptic.as_ref().ok_or_else(|| anyhow!("missing [elliptic] section"))?;
                let spec = ObservationSpec::random(e.n_locations, e.rel_noise_var, derive_seed(seed, "observations"))?;
                let pde = build_pde_dataset(cfg.data.k, e.m, e.l, &spec, e.grid_n, derive_seed(seed, "prior"))?;
                let test_spec = ObservationSpec {
                    seed: derive_seed(seed, "test-noise"),
                    ..spec
                };
                let tests = build_pde_dataset(e.test_cases, e.m, e.l, &test_spec, e.grid_n, derive_seed(seed, "test"))?;
                let cases = TestCases {
                    coefficients: tests.coefficients.rows().into_iter().map(|r| r.to_vec()).collect(),
                    observations: tests.observations.rows().into_iter().map(|r| r.to_vec()).collect(),
                };
                pde.write_json(&out.path(PDE_FILE))?;
                write_json(&out.path(TEST_CASES_FILE), &cases)?;
                pde.joint()?
            }
            (ExperimentId::Custom, DataSource::Generate) => bail!("custom experiments need data.source = \"file\""),
        };
        write_joint_dataset(&out.path(DATA_FILE), &data, DatasetFormat::Binary)?;
        Ok(())
    }

    fn load_data(&self) -> Result<JointDataset> {
        Ok(load_joint_dataset(&self.input(DATA_FILE)?, DatasetFormat::Binary)?)
    }

    // ---- prior ----------------------------------------------------------

    fn prior(&mut self, out: &mut StageOutputs) -> Result<()> {
        let data = self.load_data()?;
        let (work, stats) = self.normalized(&data)?;
        let p = &self.cfg.prior;
        let nn = if p.auto_bandwidth {
            Some(nearest_neighbor_bandwidth(&work)?)
        } else {
            None
        };
        let (sigma_u2, sigma_v2) = match nn {
            Some(h) => (h, h),
            None => (p.sigma_u2, p.sigma_v2),
        };
        let record = PriorRecord {
            k: data.k(),
            d_u: data.d_u(),
            d_v: data.d_v(),
            sigma_u2,
            sigma_v2,
            sigma_y2: p.sigma_y2,
            nn_bandwidth: nn,
        };
        build_spherical_prior(&work, sigma_u2, sigma_v2)?;
        write_json(&out.path(NORMALIZATION_FILE), &stats)?;
        write_json(&out.path(PRIOR_FILE), &record)?;
        Ok(())
    }

    fn normalized(&self, data: &JointDataset) -> Result<(JointDataset, NormalizationStats)> {
        if self.cfg.data.normalize {
            Ok(zscore_normalize(data)?)
        } else {
            Ok((data.clone(), identity_stats(data.d_u(), data.d_v())))
        }
    }

    /// Rebuilds the prior from `data.bin` and the prior-stage records.
    pub fn problem(&self) -> Result<Problem> {
        let data = self.load_data()?;
        let stats: NormalizationStats = read_json(&self.input(NORMALIZATION_FILE)?)?;
        let record: PriorRecord = read_json(&self.input(PRIOR_FILE)?)?;
        let work = stats.normalize(&data)?;
        let prior = build_spherical_prior(&work, record.sigma_u2, record.sigma_v2)?;
        Ok(Problem {
            prior,
            stats,
            sigma_y2: record.sigma_y2,
        })
    }

    /// Conditioning values in data units.
    pub fn conditioning_values(&self) -> Result<Vec<Vec<f64>>> {
        if self.cfg.experiment == ExperimentId::Elliptic {
            let cases: TestCases = read_json(&self.input(TEST_CASES_FILE)?)?;
            Ok(cases.observations)
        } else {
            Ok(self.cfg.sample.y.clone())
        }
    }

    // ---- sample ---------------------------------------------------------

    fn sample(&mut self, out: &mut StageOutputs) -> Result<()> {
        let seed = self.stage_seed("sample");
        let problem = self.problem()?;
        let ys = self.conditioning_values()?;
        let mut blocks = Vec::with_capacity(ys.len());
        for (i, y) in ys.iter().enumerate() {
            ensure!(y.len() == problem.prior.d_v(), "conditioning value {i} has length {}, data has d_v = {}", y.len(), problem.prior.d_v());
            let ode = self.cfg.ode_config(derive_seed(seed, &format!("y{i}")))?;
            let mut s = sample_posterior(&problem.normalize_y(y), self.cfg.sample.n_samples, &problem.prior, problem.sigma_y2, &ode)?;
            problem.stats.denormalize_u(&mut s.u);
            blocks.push(s.u);
        }
        write_samples_csv(&out.path(SAMPLES_FILE), &blocks)
    }

    // ---- label / train / infer -----------------------------------------

    fn label(&mut self, out: &mut StageOutputs) -> Result<()> {
        let seed = self.stage_seed("label");
        let problem = self.problem()?;
        let ys = ResampledObservations::new(problem.prior.v_means().to_owned(), problem.sigma_y2)?;
        let ode = self.cfg.ode_config(seed)?;
        let labeled = generate_labeled_dataset(&ys, self.cfg.label.j, &problem.prior, problem.sigma_y2, &ode)?;
        write_labeled_dataset(&out.path(LABELED_FILE), &labeled)?;
        Ok(())
    }

    fn train(&mut self, out: &mut StageOutputs) -> Result<()> {
        let seed = self.stage_seed("train");
        let labeled = read_labeled_dataset(&self.input(LABELED_FILE)?)?;
        let stats: NormalizationStats = read_json(&self.input(NORMALIZATION_FILE)?)?;
        let trained = train_amortized(&labeled, &self.cfg.train_config(seed))?;
        write_checkpoint(&out.path(MODEL_FILE), &trained.model, seed, Some(&stats))?;
        write_loss_csv(&out.path(LOSS_FILE), &trained.loss_history)?;
        Ok(())
    }

    fn infer(&mut self, out: &mut StageOutputs) -> Result<()> {
        let seed = self.stage_seed("infer");
        let (model, header) = read_checkpoint(&self.input(MODEL_FILE)?)?;
        let stats = header
            .normalization
            .ok_or_else(|| anyhow!("checkpoint carries no normalization statistics"))?;
        let ys = self.conditioning_values()?;
        let mut blocks = Vec::with_capacity(ys.len());
        for (i, y) in ys.iter().enumerate() {
            let mut u = sample_amortized(&model, &stats.normalize_y(y), self.cfg.eval.n_nn_samples, derive_seed(seed, &format!("y{i}")))?;
            stats.denormalize_u(&mut u);
            blocks.push(u);
        }
        write_samples_csv(&out.path(NN_SAMPLES_FILE), &blocks)
    }

    // ---- eval -----------------------------------------------------------

    /// Sample files present in the output directory, with their source names.
    fn sample_sources(&self) -> Result<Vec<(String, Vec<Array2<f64>>)>> {
        let mut sources = Vec::new();
        for (name, file) in [("dm", SAMPLES_FILE), ("nn", NN_SAMPLES_FILE)] {
            let path = self.dir.join(file);
            if path.is_file() {
                sources.push((name.to_string(), read_samples_csv(&path)?));
            }
        }
        ensure!(!sources.is_empty(), "no samples to evaluate; run `sample` or `infer` first");
        Ok(sources)
    }

    fn eval(&mut self, out: &mut StageOutputs) -> Result<()> {
        let report = match self.cfg.experiment {
            ExperimentId::Bimodal => self.eval_bimodal(out)?,
            ExperimentId::Gmm20d => self.eval_two_mode(out)?,
            ExperimentId::Elliptic => self.eval_elliptic(out)?,
            ExperimentId::Custom => self.eval_custom()?,
        };
        write_json(&out.path(EVAL_FILE), &report)
    }

    fn eval_bimodal(&self, out: &mut StageOutputs) -> Result<EvalReport> {
        let problem = self.problem()?;
        let noise_var = self.cfg.bimodal.as_ref().map(|b| b.noise_var).ok_or_else(|| anyhow!("missing [bimodal] section"))?;
        let ys = self.conditioning_values()?;
        let mut rows = Vec::new();
        let mut table = Vec::new();
        for (source, blocks) in self.sample_sources()? {
            for (i, (u, y)) in blocks.iter().zip(&ys).enumerate() {
                let samples = u.column(0).to_vec();
                let (errors, densities) = bimodal_errors(&problem, &samples, y[0], noise_var, self.cfg.kde_bandwidth())?;
                write_bimodal_densities(&out.path(&format!("density_{source}_y{i}.csv")), &densities)?;
                table.push(KlReport {
                    case: format!("{source}/y{i}"),
                    k: problem.prior.k(),
                    sigma_u2: problem.prior.sigma_u2(),
                    sigma_y2: problem.sigma_y2,
                    dtau: 1.0 / self.cfg.ode.n_steps as f64,
                    e_exact: errors.e_exact,
                    e_gmm: errors.e_gmm,
                    e_bgmm: errors.e_bgmm,
                });
                rows.push(BimodalEvalRow {
                    source: source.clone(),
                    y: y[0],
                    errors,
                });
            }
        }
        write_kl_reports_csv(&out.path("kl.csv"), &table)?;
        Ok(EvalReport::Bimodal { rows })
    }

    fn eval_two_mode(&self, out: &mut StageOutputs) -> Result<EvalReport> {
        let g = self.cfg.gmm20d.as_ref().ok_or_else(|| anyhow!("missing [gmm20d] section"))?;
        let ys = self.conditioning_values()?;
        let mut rows = Vec::new();
        for (source, blocks) in self.sample_sources()? {
            for (u, y) in blocks.iter().zip(&ys) {
                let errors = two_mode_errors(u.view(), &g.mu1, g.d_u, y, self.cfg.eval.projection_bandwidth, self.cfg.kde_bandwidth())?;
                rows.push(TwoModeEvalRow {
                    source: source.clone(),
                    y: y.clone(),
                    errors,
                });
            }
        }
        let mut w = BufWriter::new(fs::File::create(out.path("kl_20d.csv"))?);
        writeln!(w, "source,y_index,projected_kl,mean_per_dim_kl")?;
        let mut per_dim = BufWriter::new(fs::File::create(out.path("per_dim_kl.csv"))?);
        writeln!(per_dim, "source,y_index,dim,kl")?;
        for (r, row) in rows.iter().enumerate() {
            let i = r % ys.len();
            writeln!(w, "{},{i},{:e},{:e}", row.source, row.errors.projected_kl, row.errors.mean_per_dim_kl)?;
            for (d, kl) in row.errors.per_dim_kl.iter().enumerate() {
                writeln!(per_dim, "{},{i},{d},{kl:e}", row.source)?;
            }
        }
        w.flush()?;
        per_dim.flush()?;
        Ok(EvalReport::Gmm20d { rows })
    }

    fn eval_elliptic(&self, out: &mut StageOutputs) -> Result<EvalReport> {
        let pde = PdeDataset::read_json(&self.input(PDE_FILE)?)?;
        let cases: TestCases = read_json(&self.input(TEST_CASES_FILE)?)?;
        let to_coeffs = |rows: ArrayView2<f64>| -> Result<Vec<PermeabilityCoefficients>> {
            rows.rows()
                .into_iter()
                .map(|r| Ok(PermeabilityCoefficients::new(pde.m, pde.l, r.to_vec())?))
                .collect()
        };
        let n_prior = self.cfg.sample.n_samples.min(pde.len());
        let prior_draws = to_coeffs(pde.coefficients.slice(ndarray::s![..n_prior, ..]))?;
        let sources = self.sample_sources()?;
        let mut rows = Vec::new();
        for (c, truth) in cases.coefficients.iter().enumerate() {
            let truth = PermeabilityCoefficients::new(pde.m, pde.l, truth.clone())?;
            let mut add = |source: &str, draws: &[PermeabilityCoefficients]| -> Result<()> {
                rows.push(EllipticEvalRow {
                    case: c,
                    source: source.into(),
                    summary: recovery_summary(&truth, draws, &pde.spec.locations, pde.grid_n)?,
                });
                Ok(())
            };
            add("prior", &prior_draws)?;
            for (source, blocks) in &sources {
                let block = blocks.get(c).ok_or_else(|| anyhow!("{source} samples have no block for test case {c}"))?;
                add(source, &to_coeffs(block.view())?)?;
            }
        }
        let mut w = BufWriter::new(fs::File::create(out.path("recovery.csv"))?);
        writeln!(w, "case,source,permeability_mse_median,permeability_mse_iqr,solution_mse_median,solution_mse_iqr")?;
        for r in &rows {
            let s = &r.summary;
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e}",
                r.case, r.source, s.permeability_mse_median, s.permeability_mse_iqr, s.solution_mse_median, s.solution_mse_iqr
            )?;
        }
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(out.path("error_iqr.csv"))?);
        writeln!(w, "case,source,location,x,y,iqr")?;
        for r in &rows {
            for (i, iqr) in r.summary.error_iqr.iter().enumerate() {
                let [x, y] = pde.spec.locations[i];
                writeln!(w, "{},{},{i},{x:?},{y:?},{iqr:e}", r.case, r.source)?;
            }
        }
        w.flush()?;
        Ok(EvalReport::Elliptic { rows })
    }

    fn eval_custom(&self) -> Result<EvalReport> {
        let mut sources = Vec::new();
        for (source, blocks) in self.sample_sources()? {
            for (i, u) in blocks.iter().enumerate() {
                let mean = u.mean_axis(ndarray::Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
                let std = u.std_axis(ndarray::Axis(0), 0.0).to_vec();
                sources.push(SampleSummary {
                    source: source.clone(),
                    y_index: i,
                    mean,
                    std,
                });
            }
        }
        Ok(EvalReport::Custom { sources })
    }

    // ---- sweeps ---------------------------------------------------------

    /// Bimodal table: every ablation case scored against the three references.
    pub fn ablation(&mut self) -> Result<Vec<KlReport>> {
        ensure!(self.cfg.experiment == ExperimentId::Bimodal, "ablation is defined for the bimodal experiment");
        let data_seed = self.stage_seed("gen-data");
        let sample_seed = self.stage_seed("sample");
        let mut rows = Vec::new();
        self.guarded("ablation", |p, out| {
            let cfg = &p.cfg;
            let ab = cfg.ablation.as_ref().ok_or_else(|| anyhow!("missing [ablation] section"))?;
            let noise_var = cfg.bimodal.as_ref().map(|b| b.noise_var).ok_or_else(|| anyhow!("missing [bimodal] section"))?;
            let y = cfg.sample.y.first().ok_or_else(|| anyhow!("sample.y is empty"))?[0];
            let ode = cfg.ode_config(sample_seed)?;
            for case in &ab.cases {
                log::info!("ablation case {}", case.name);
                let data = bimodal_joint_samples(case.k, noise_var, data_seed)?;
                let problem = p.bimodal_problem(&data, case.sigma_u2, case.sigma_y2)?;
                let mut s = sample_posterior(&problem.normalize_y(&[y]), ab.n_samples, &problem.prior, case.sigma_y2, &ode)?;
                problem.stats.denormalize_u(&mut s.u);
                let (e, _) = bimodal_errors(&problem, &s.u.column(0).to_vec(), y, noise_var, cfg.kde_bandwidth())?;
                log::info!("  e_exact {:.3e}  e_gmm {:.3e}  e_bgmm {:.3e}", e.e_exact, e.e_gmm, e.e_bgmm);
                rows.push(KlReport {
                    case: case.name.clone(),
                    k: case.k,
                    sigma_u2: case.sigma_u2,
                    sigma_y2: case.sigma_y2,
                    dtau: ode.dtau(),
                    e_exact: e.e_exact,
                    e_gmm: e.e_gmm,
                    e_bgmm: e.e_bgmm,
                });
            }
            write_kl_reports_csv(&out.path(ABLATION_FILE), &rows)?;
            Ok(())
        })?;
        self.finish()?;
        Ok(rows)
    }

    /// `e_BGMM` against the step count with the initial draws held fixed;
    /// returns the `(n_steps, e_bgmm)` pairs and the log-log slope.
    pub fn convergence(&mut self) -> Result<(Vec<(usize, f64)>, f64)> {
        ensure!(self.cfg.experiment == ExperimentId::Bimodal, "convergence is defined for the bimodal experiment");
        let data_seed = self.stage_seed("gen-data");
        let sample_seed = self.stage_seed("sample");
        let mut points = Vec::new();
        let mut slope = f64::NAN;
        self.guarded("convergence", |p, out| {
            let cfg = &p.cfg;
            let conv = cfg.convergence.as_ref().ok_or_else(|| anyhow!("missing [convergence] section"))?;
            let noise_var = cfg.bimodal.as_ref().map(|b| b.noise_var).ok_or_else(|| anyhow!("missing [bimodal] section"))?;
            let y = cfg.sample.y.first().ok_or_else(|| anyhow!("sample.y is empty"))?[0];
            let data = bimodal_joint_samples(cfg.data.k, noise_var, data_seed)?;
            let problem = p.bimodal_problem(&data, cfg.prior.sigma_u2, cfg.prior.sigma_y2)?;
            for &n_steps in &conv.steps {
                let ode = esd_core::reverse_ode::ReverseOdeConfig {
                    n_steps,
                    ..cfg.ode_config(sample_seed)?
                };
                let mut s = sample_posterior(&problem.normalize_y(&[y]), conv.n_samples, &problem.prior, problem.sigma_y2, &ode)?;
                problem.stats.denormalize_u(&mut s.u);
                let (e, _) = bimodal_errors(&problem, &s.u.column(0).to_vec(), y, noise_var, cfg.kde_bandwidth())?;
                log::info!("N = {n_steps}: e_bgmm {:.3e}", e.e_bgmm);
                points.push((n_steps, e.e_bgmm));
            }
            slope = log_log_slope(&points);
            let mut w = BufWriter::new(fs::File::create(out.path(CONVERGENCE_FILE))?);
            writeln!(w, "n_steps,e_bgmm")?;
            for (n, e) in &points {
                writeln!(w, "{n},{e:e}")?;
            }
            w.flush()?;
            write_json(&out.path(CONVERGENCE_SUMMARY_FILE), &serde_json::json!({ "slope": slope }))?;
            Ok(())
        })?;
        self.finish()?;
        Ok((points, slope))
    }

    fn bimodal_problem(&self, data: &JointDataset, sigma_u2: f64, sigma_y2: f64) -> Result<Problem> {
        let (work, stats) = self.normalized(data)?;
        Ok(Problem {
            prior: build_spherical_prior(&work, sigma_u2, sigma_u2)?,
            stats,
            sigma_y2,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// One block of rows per conditioning value: `y_index,u0,u1,…`.
pub fn write_samples_csv(path: &Path, blocks: &[Array2<f64>]) -> Result<()> {
    let d = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "y_index")?;
    for j in 0..d {
        write!(w, ",u{j}")?;
    }
    writeln!(w)?;
    for (i, block) in blocks.iter().enumerate() {
        for row in block.rows() {
            write!(w, "{i}")?;
            for v in row {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Array2<f64>>> {
    let reader = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))??;
    let d = header.split(',').count() - 1;
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let mut fields = line.split(',');
        let idx: usize = fields
            .next()
            .unwrap_or_default()
            .parse()
            .with_context(|| format!("{} row {}: bad y_index", path.display(), n + 2))?;
        if idx >= blocks.len() {
            blocks.resize(idx + 1, Vec::new());
        }
        let before = blocks[idx].len();
        for f in fields {
            blocks[idx].push(f.parse().with_context(|| format!("{} row {}: bad number `{f}`", path.display(), n + 2))?);
        }
        ensure!(blocks[idx].len() - before == d, "{} row {}: expected {d} values", path.display(), n + 2);
    }
    blocks
        .into_iter()
        .map(|v| Ok(Array2::from_shape_vec((v.len() / d.max(1), d), v)?))
        .collect()
}
