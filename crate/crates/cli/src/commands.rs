//! The `ppmctl` verbs as library calls.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ppm_control::control_model::{build_extended, linearize};
use ppm_control::hinf::{self, spectral_abscissa, CertificateReport};
use ppm_control::services::{build_deload_curve, DeloadCurve};
use ppm_control::sim::{self, deloaded_operating_point, ControllerKind, DeloadMode, MetricsReport, Scenario, TimeSeries};
use ppm_control::reference;
use serde::{Deserialize, Serialize};

use crate::artifact::{ControllerBody, ControllerFile, GainMatrix, RunManifest, CONTROLLER_FORMAT, CONTROLLER_VERSION};
use crate::config::{DeloadConfig, ParameterFile, SynthConfig};
use crate::output::{self, Comparison};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub parameter_set: String,
    pub wind_speed: f64,
    pub open_loop_abscissa: f64,
    pub gamma: f64,
    pub gamma_direct: Option<f64>,
    pub gamma_bisection: Option<f64>,
    pub newton_steps: usize,
    pub certificate: CertificateReport,
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub controller: ControllerFile,
    pub report: SynthReport,
}

/// Equilibrium, linearization, extended system, synthesis and certification.
/// Validation happens before any solve.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthOutcome, CliError> {
    let model = cfg.validate()?;
    let plant = cfg.plant()?;
    let (op, _, wind) = deloaded_operating_point(&model, cfg.wind_speed, DeloadMode::Speed, cfg.q_ref, cfg.vdc_ref)?;
    let lin = linearize(&model.params, &op)?;
    let ext = build_extended(&lin, &cfg.weight.build()?)?;
    info!("synthesizing on the {}-state extended system", ext.n());
    let result = hinf::synthesize(&ext, &cfg.synthesis)?;
    let certificate = hinf::certify(&ext, &result);
    let report = SynthReport {
        parameter_set: plant.version.clone(),
        wind_speed: wind,
        open_loop_abscissa: spectral_abscissa(&lin.a),
        gamma: result.gamma,
        gamma_direct: result.status.gamma_direct,
        gamma_bisection: result.status.gamma_bisection,
        newton_steps: result.status.newton_steps,
        certificate: certificate.clone(),
    };
    let controller = ControllerFile::new(ControllerBody {
        format: CONTROLLER_FORMAT.into(),
        version: CONTROLLER_VERSION,
        plant,
        wind_speed: wind,
        weight: cfg.weight,
        synthesis: cfg.synthesis,
        gamma: result.gamma,
        certificate,
        gain: GainMatrix::from_matrix(&result.k),
    });
    Ok(SynthOutcome { controller, report })
}

/// Writes `<name>.json` (controller), `<name>_report.json` and
/// `<name>_manifest.json`. An uncertified controller is not written.
pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path, name: &str) -> Result<SynthOutcome, CliError> {
    let out = synthesize(cfg)?;
    create_dir(out_dir)?;
    write(&out_dir.join(format!("{name}_report.json")), &to_json(&out.report))?;
    let c = &out.report.certificate;
    if !c.passed {
        return Err(CliError::Certification(format!(
            "abscissa {:.3e}, norm {:?} vs γ {:.4e}, LMI residual {:.3e}; controller not written",
            c.spectral_abscissa, c.hinf_norm, c.gamma, c.lmi_residual
        )));
    }
    write(&out_dir.join(format!("{name}.json")), &out.controller.to_json())?;
    let mut manifest = RunManifest::new("synth", cfg, &out.controller.body.plant);
    manifest.controller_sha256 = Some(out.controller.sha256.clone());
    write(&out_dir.join(format!("{name}_manifest.json")), &manifest.to_json())?;
    Ok(out)
}

/// Plant of a run: the controller's own plant, else `params`, else the
/// bundled reference set.
pub fn resolve_plant(controller: Option<&ControllerFile>, params: Option<&ParameterFile>) -> Result<ParameterFile, CliError> {
    match (controller, params) {
        (Some(c), Some(p)) if c.body.plant != *p => {
            Err(CliError::Config("parameter file differs from the plant the controller was designed for".into()))
        }
        (Some(c), _) => Ok(c.body.plant.clone()),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => ParameterFile::bundled(),
    }
}

/// From the first event (or the start) to the end of the run.
pub fn default_window(sc: &Scenario) -> (f64, f64) {
    (sc.events.first().map_or(0.0, |e| e.time), sc.duration)
}

#[derive(Debug, Clone, Default)]
pub struct SimRequest {
    pub controller: Option<ControllerFile>,
    pub params: Option<ParameterFile>,
    /// Also run the vector-control baseline on the same scenario.
    pub compare_vector: bool,
    pub window: Option<(f64, f64)>,
    pub plot: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub scenario: Scenario,
    pub series: TimeSeries,
    pub metrics: MetricsReport,
    pub manifest: RunManifest,
    pub baseline: Option<TimeSeries>,
    pub comparison: Option<Comparison>,
}

/// Runs the scenario (and the baseline when asked) without touching disk.
pub fn simulate(sc: &Scenario, req: &SimRequest) -> Result<SimOutcome, CliError> {
    sc.validate()?;
    let plant = resolve_plant(req.controller.as_ref(), req.params.as_ref())?;
    let model = plant.to_model()?;
    let gains = match (&req.controller, sc.controller) {
        (Some(c), _) => Some(c.gains()?),
        (None, ControllerKind::Coordinated) => {
            return Err(CliError::Config(format!("scenario `{}` uses the coordinated controller: pass a controller file", sc.name)))
        }
        (None, _) => None,
    };
    let (t0, t1) = req.window.unwrap_or_else(|| default_window(sc));
    if !(t0 < t1 && t0 >= 0.0 && t1 <= sc.duration) {
        return Err(CliError::Config(format!("metrics window [{t0}, {t1}] outside the run")));
    }
    for c in &req.plot {
        if !sim::channel_names().contains(c) {
            return Err(ppm_control::Error::MissingChannel(c.clone()).into());
        }
    }
    info!("running `{}` ({:?}, {} steps)", sc.name, sc.controller, sc.n_steps());
    let series = sim::run(sc, &model, gains.as_ref())?;
    let metrics = sim::metrics(&series, t0, t1)?;
    let (baseline, comparison) = if req.compare_vector {
        if sc.controller != ControllerKind::Coordinated {
            return Err(CliError::Config("--compare vector needs a coordinated scenario".into()));
        }
        let base_sc = Scenario { controller: ControllerKind::Vector, ..sc.clone() };
        let b = sim::run(&base_sc, &model, None)?;
        let cmp = Comparison::new(&metrics, &sim::metrics(&b, t0, t1)?);
        (Some(b), Some(cmp))
    } else {
        (None, None)
    };
    let mut manifest = RunManifest::new("sim", sc, &plant);
    manifest.controller_sha256 = req.controller.as_ref().map(|c| c.sha256.clone());
    manifest.scheme = Some("rk4".into());
    manifest.dt = Some(sc.dt);
    Ok(SimOutcome { scenario: sc.clone(), series, metrics, manifest, baseline, comparison })
}

/// Files of a run, named after the scenario.
pub fn write_sim(out: &SimOutcome, out_dir: &Path, plot: &[String]) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out_dir)?;
    let name = &out.scenario.name;
    let mut files = Vec::new();
    let csv = out_dir.join(format!("{name}.csv"));
    output::write_timeseries_csv(&out.series, create(&csv)?)?;
    files.push(csv);
    let m = out_dir.join(format!("{name}_metrics.json"));
    write(&m, &to_json(&out.metrics))?;
    files.push(m);
    let man = out_dir.join(format!("{name}_manifest.json"));
    write(&man, &out.manifest.to_json())?;
    files.push(man);
    if let (Some(b), Some(c)) = (&out.baseline, &out.comparison) {
        let p = out_dir.join(format!("{name}_vector.csv"));
        output::write_timeseries_csv(b, create(&p)?)?;
        files.push(p);
        let p = out_dir.join(format!("{name}_compare.json"));
        write(&p, &to_json(c))?;
        files.push(p);
    }
    if !plot.is_empty() {
        let names: Vec<&str> = plot.iter().map(String::as_str).collect();
        let p = out_dir.join(format!("{name}.svg"));
        output::plot_svg(&out.series, &names, &p)?;
        files.push(p);
    }
    Ok(files)
}

pub fn cmd_sim(sc: &Scenario, req: &SimRequest, out_dir: &Path) -> Result<(SimOutcome, Vec<PathBuf>), CliError> {
    let out = simulate(sc, req)?;
    let files = write_sim(&out, out_dir, &req.plot)?;
    Ok((out, files))
}

/// Independent runs on separate threads; results keep the input order.
pub fn cmd_sweep(scenarios: &[Scenario], req: &SimRequest, out_dir: &Path) -> Vec<Result<(SimOutcome, Vec<PathBuf>), CliError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = scenarios.iter().map(|sc| s.spawn(move || cmd_sim(sc, req, out_dir))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Runtime("scenario thread panicked".into()))))
            .collect()
    })
}

pub fn deload_table(cfg: &DeloadConfig) -> Result<DeloadCurve, CliError> {
    let aero = cfg.aero.unwrap_or_else(reference::aero);
    let s_b = cfg.s_b.unwrap_or(reference::RATED_POWER_W);
    Ok(build_deload_curve(&aero, &cfg.wind.speeds()?, cfg.fraction, s_b)?)
}

/// Writes `deload.csv` and `deload_manifest.json`.
pub fn cmd_deload(cfg: &DeloadConfig, out_dir: &Path) -> Result<(DeloadCurve, PathBuf), CliError> {
    let curve = deload_table(cfg)?;
    create_dir(out_dir)?;
    let path = out_dir.join("deload.csv");
    output::write_deload_csv(&curve, create(&path)?)?;
    let manifest = RunManifest::new("deload", cfg, &ParameterFile::bundled()?);
    write(&out_dir.join("deload_manifest.json"), &manifest.to_json())?;
    Ok((curve, path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
