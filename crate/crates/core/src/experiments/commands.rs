use super::config::{ExperimentConfig, InversionMode, RandomFieldConfig, SweepParameter};
use super::output::{create_dir, metadata_path_for, vtk_string, write_file, write_json, Metadata, METADATA_FILE};
use super::ExperimentError;
use crate::bayes::{
    acf, curve_misfit, posterior_summary, run_multi_dimensional, run_one_dimensional, Chain, FieldForward,
    FieldUpdate, ForwardModel, ObservationSet, ParamPoint, PosteriorSummary, Prior, UniformForward,
};
use crate::constitutive::MaterialParams;
use crate::homogeneous1d::{peak_stress, stress_strain_curve};
use crate::mesh::Mesh2D;
use crate::randomfield::{cache_file_name, load_or_decompose, realize_lognormal, sample_xi, KLBasis};
use crate::solver::{BoundaryConditions, LoadDispCurve, MaterialField, PhaseFieldSolver};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Files written by a command and a JSON summary of the run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new(), summary: json!({}) }
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        write_file(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        write_json(&path, value)?;
        self.files.push(path);
        Ok(())
    }
}

pub fn material_params(cfg: &ExperimentConfig) -> Result<MaterialParams, ExperimentError> {
    let m = &cfg.material;
    MaterialParams::new(m.mu, m.bulk, m.gc, m.kappa, cfg.ell()).map_err(|e| ExperimentError::Config(e.to_string()))
}

fn kl_basis(cfg: &ExperimentConfig, mesh: &Mesh2D, rf: &RandomFieldConfig) -> Result<KLBasis, ExperimentError> {
    let dir = rf.cache_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    create_dir(&dir)?;
    let spec = rf.spec();
    Ok(load_or_decompose(mesh, &spec, &dir.join(cache_file_name(mesh, &spec)))?)
}

fn curve_summary(curve: &LoadDispCurve) -> serde_json::Value {
    let step_of = |i: usize| curve.steps[i].step;
    json!({
        "steps": curve.len(),
        "termination": curve.termination,
        "first_peak_step": curve.first_peak.map(step_of),
        "first_peak_force": curve.peak_force(),
        "peak_steps": curve.peaks(0.05).into_iter().map(step_of).collect::<Vec<_>>(),
        "max_force_step": max_force_index(curve).map(step_of),
        "failure_step": curve.failure.map(step_of),
    })
}

fn max_force_index(curve: &LoadDispCurve) -> Option<usize> {
    (0..curve.len()).max_by(|&a, &b| curve.steps[a].force.total_cmp(&curve.steps[b].force))
}

/// Solve the configured specimen and write `curve.csv`, VTK snapshots, the
/// metadata sidecar and `summary.json`. Curve rows are flushed as steps
/// converge, so a failed run leaves the completed prefix behind.
pub fn cmd_forward(cfg: &ExperimentConfig) -> Result<Artifacts, ExperimentError> {
    cfg.validate()?;
    let params = material_params(cfg)?;
    let mesh = cfg.build_mesh()?;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let mut art = Artifacts::new(&dir);
    art.write_json(METADATA_FILE, &Metadata::new("forward", cfg, params))?;

    let materials = match &cfg.random_field {
        None => MaterialField::uniform(&mesh, params),
        Some(rf) => {
            let basis = kl_basis(cfg, &mesh, rf)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let nn = mesh.num_nodes();
            let mut fields: [Vec<f64>; 3] = Default::default();
            for (slot, mean) in fields.iter_mut().zip([params.mu, params.bulk, params.gc]) {
                let xi = sample_xi(basis.n_kl(), &mut rng);
                *slot = realize_lognormal(&basis, &vec![mean.ln(); nn], &xi)?;
            }
            let mut table = String::from("node,x,y,mu,K,Gc\n");
            for (k, p) in mesh.nodes.iter().enumerate() {
                table.push_str(&format!("{k},{:e},{:e},{:e},{:e},{:e}\n", p[0], p[1], fields[0][k], fields[1][k], fields[2][k]));
            }
            art.write("material_field.csv", table)?;
            MaterialField::from_nodal_fields(&mesh, &fields[0], &fields[1], &fields[2], params.kappa, params.ell)
        }
    };
    let solver = PhaseFieldSolver::new(&mesh, materials, BoundaryConditions::tension(&mesh), cfg.solver)?;

    let curve_path = dir.join("curve.csv");
    let file = std::fs::File::create(&curve_path).map_err(|e| ExperimentError::io(&curve_path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    let mut io_error: Option<ExperimentError> = None;
    let mut snapshots = Vec::new();
    let mut record = |res: std::io::Result<()>, path: &Path| {
        if let Err(e) = res {
            io_error.get_or_insert(ExperimentError::io(path, e));
        }
    };
    record(writer.write_all(b"step,u_bar,F\n"), &curve_path);
    let stride = cfg.output.vtk_stride;
    let result = solver.run_load_stepping_with(|step, state| {
        record(writer.write_all(step.csv_row().as_bytes()).and_then(|_| writer.flush()), &curve_path);
        if cfg.output.vtk && stride > 0 && step.step % stride == 0 {
            let p = dir.join(format!("field_{:04}.vtk", step.step));
            record(std::fs::write(&p, vtk_string(&mesh, &state.u, &state.d, &format!("step {}", step.step))), &p);
            snapshots.push(p);
        }
    });
    let flushed = writer.flush();
    record(flushed, &curve_path);
    art.files.push(curve_path);
    art.files.extend(snapshots);
    let (curve, state) = result?;
    if let Some(e) = io_error {
        return Err(e);
    }
    if cfg.output.vtk {
        art.write("field_final.vtk", vtk_string(&mesh, &state.u, &state.d, "final state"))?;
    }
    art.summary = curve_summary(&curve);
    art.write_json("summary.json", &art.summary.clone())?;
    Ok(art)
}

/// Read the reference curve and check its sidecar against the config: same
/// geometry and load increment, strictly finer mesh.
pub fn load_reference(cfg: &ExperimentConfig) -> Result<LoadDispCurve, ExperimentError> {
    let path = cfg
        .inversion
        .reference
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("inversion.reference is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    let curve = LoadDispCurve::from_csv(&text)?;
    let meta_path = metadata_path_for(path);
    if !meta_path.exists() {
        return Err(ExperimentError::Reference(format!("missing metadata sidecar {}", meta_path.display())));
    }
    let meta = Metadata::read(&meta_path)?;
    if meta.geometry != cfg.geometry {
        return Err(ExperimentError::Reference(format!(
            "reference geometry {} does not match config geometry {}",
            meta.geometry, cfg.geometry
        )));
    }
    if meta.n <= cfg.n {
        return Err(ExperimentError::Reference(format!(
            "reference mesh n={} is not finer than the forward mesh n={}",
            meta.n, cfg.n
        )));
    }
    if (meta.du_bar - cfg.solver.du_bar).abs() > 1e-12 * cfg.solver.du_bar.abs() {
        return Err(ExperimentError::Reference(format!(
            "reference du_bar {} differs from {}",
            meta.du_bar, cfg.solver.du_bar
        )));
    }
    Ok(curve)
}

fn simulate(model: &mut dyn ForwardModel, theta: &[f64]) -> Result<LoadDispCurve, ExperimentError> {
    model.simulate(theta).map_err(ExperimentError::Forward)
}

fn histogram_table(summary: &PosteriorSummary) -> String {
    let names = ["mu_star", "K_star", "Gc_star"];
    let mut s = String::from("param,bin_lo,bin_hi,mass\n");
    for (k, h) in summary.histograms.iter().enumerate().take(3) {
        let w = h.bin_width();
        for (b, m) in h.mass.iter().enumerate() {
            let lo = h.lo + b as f64 * w;
            s.push_str(&format!("{},{:e},{:e},{:e}\n", names[k], lo, lo + w, m));
        }
    }
    s
}

fn acf_table(chain: &Chain, max_lag: usize) -> String {
    let mut s = String::from("tau,R_mu,R_K,R_Gc\n");
    let cols: Vec<Vec<f64>> = (0..3).map(|k| chain.component(k)).collect();
    for tau in 0..=max_lag.min(chain.len().saturating_sub(1)) {
        s.push_str(&tau.to_string());
        for c in &cols {
            match acf(c, tau) {
                Ok(r) => s.push_str(&format!(",{r:e}")),
                Err(_) => s.push_str(",NaN"),
            }
        }
        s.push('\n');
    }
    s
}

/// Sample the posterior for each requested mode, then rerun the forward model
/// at the prior mean and at each posterior mean.
pub fn cmd_invert(cfg: &ExperimentConfig) -> Result<Artifacts, ExperimentError> {
    cfg.validate_inversion()?;
    let params = material_params(cfg)?;
    let reference = load_reference(cfg)?;
    let mesh = cfg.build_mesh()?;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let mut art = Artifacts::new(&dir);
    art.write_json(METADATA_FILE, &Metadata::new("invert", cfg, params))?;

    let inv = &cfg.inversion;
    let mut obs = ObservationSet::new(reference, inv.sigma2)?;
    obs.missing_step_penalty = inv.missing_step_penalty;

    let box_mean = Prior::UniformBox(inv.bounds.as_pairs()).mean_point();
    let (mut model, prior, prior_theta): (Box<dyn ForwardModel>, Prior, Vec<f64>) = match &cfg.random_field {
        None => {
            let prior = cfg.uniform_prior();
            let model = UniformForward { mesh: mesh.clone(), solver: cfg.solver, kappa: params.kappa, ell: params.ell };
            (Box::new(model), prior, box_mean.theta)
        }
        Some(rf) => {
            let basis = kl_basis(cfg, &mesh, rf)?;
            let k = basis.n_kl();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let xi = [sample_xi(k, &mut rng), sample_xi(k, &mut rng), sample_xi(k, &mut rng)];
            let extra = match rf.update {
                FieldUpdate::Mean => 0,
                FieldUpdate::Coefficients => 3 * k,
            };
            let mut mean = box_mean.theta.clone();
            mean.extend(std::iter::repeat_n(0.0, extra));
            let mut sd = vec![rf.sigma; 3];
            sd.extend(std::iter::repeat_n(1.0, extra));
            let model = FieldForward {
                mesh: mesh.clone(),
                solver: cfg.solver,
                kappa: params.kappa,
                ell: params.ell,
                basis,
                xi,
                update: rf.update,
            };
            (Box::new(model), Prior::Normal { mean: mean.clone(), sd }, mean)
        }
    };

    let prior_curve = simulate(model.as_mut(), &prior_theta)?;
    let prior_misfit = curve_misfit(&prior_curve, &obs.curve);
    art.write("curve_prior_mean.csv", prior_curve.to_csv())?;

    let modes: Vec<(&str, InversionMode)> = match cfg.mode {
        InversionMode::Both => vec![
            ("one_dimensional", InversionMode::OneDimensional),
            ("multi_dimensional", InversionMode::MultiDimensional),
        ],
        InversionMode::OneDimensional => vec![("one_dimensional", InversionMode::OneDimensional)],
        InversionMode::MultiDimensional => vec![("multi_dimensional", InversionMode::MultiDimensional)],
    };

    let mut report = serde_json::Map::new();
    report.insert(
        "prior_mean".into(),
        json!({
            "theta": prior_theta[..3].to_vec(),
            "physical": ParamPoint::new(prior_theta[..3].to_vec()).physical(),
            "misfit": prior_misfit,
            "curve": curve_summary(&prior_curve),
        }),
    );
    report.insert("reference".into(), curve_summary(&obs.curve));

    for (tag, mode) in modes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (chain, post_theta) = match mode {
            InversionMode::OneDimensional => {
                let per_phase = inv.n_samples.div_ceil(2);
                let r = run_one_dimensional(model.as_mut(), &obs, &prior, &inv.proposal, per_phase, inv.burn_in, &mut rng)?;
                let gc = posterior_summary(&r.phase_b, inv.burn_in, 1)?.mean_physical[2];
                let theta = vec![r.fitted_pair[0].ln(), r.fitted_pair[1].ln(), gc.ln()];
                (r.combined(), theta)
            }
            _ => {
                let start = ParamPoint::new(prior_theta.clone());
                let chain =
                    run_multi_dimensional(model.as_mut(), &obs, &prior, start, &inv.proposal, inv.n_samples, &mut rng)?;
                let s = posterior_summary(&chain, inv.burn_in, 1)?;
                let theta = match &prior {
                    Prior::UniformBox(_) => s.mean_physical.iter().map(|v| v.ln()).collect(),
                    Prior::Normal { .. } => s.mean_log.clone(),
                };
                (chain, theta)
            }
        };
        let summary = posterior_summary(&chain, inv.burn_in, inv.bins)?;
        let summary_all = posterior_summary(&chain, 0.0, inv.bins)?;

        let mut csv = Vec::new();
        chain.write_csv(&mut csv)?;
        art.write(&format!("chain_{tag}.csv"), csv)?;
        art.write(&format!("histograms_{tag}.csv"), histogram_table(&summary))?;
        art.write(&format!("histograms_{tag}_no_burn_in.csv"), histogram_table(&summary_all))?;
        if let Some(j) = &summary.joint {
            art.write(&format!("joint_mu_K_{tag}.csv"), j.to_csv())?;
        }
        art.write(&format!("acf_{tag}.csv"), acf_table(&chain, inv.max_lag))?;

        let post_curve = simulate(model.as_mut(), &post_theta)?;
        let misfit = curve_misfit(&post_curve, &obs.curve);
        art.write(&format!("curve_posterior_mean_{tag}.csv"), post_curve.to_csv())?;
        log::info!("{tag}: acceptance {:.3}, posterior-mean misfit {misfit:.4e} (prior mean {prior_misfit:.4e})", summary.acceptance_rate);
        report.insert(
            tag.into(),
            json!({
                "samples": chain.len(),
                "acceptance_rate": summary.acceptance_rate,
                "burn_in": inv.burn_in,
                "mean_physical": summary.mean_physical[..3].to_vec(),
                "exp_mean_log": summary.exp_mean_log[..3].to_vec(),
                "mean_physical_no_burn_in": summary_all.mean_physical[..3].to_vec(),
                "exp_mean_log_no_burn_in": summary_all.exp_mean_log[..3].to_vec(),
                "verification_theta": post_theta[..3].to_vec(),
                "misfit": misfit,
                "curve": curve_summary(&post_curve),
            }),
        );
    }
    art.summary = serde_json::Value::Object(report);
    art.write_json("report.json", &art.summary.clone())?;
    Ok(art)
}

/// Bar stress-strain curves per κ and a peak table.
pub fn cmd_homogeneous(cfg: &ExperimentConfig) -> Result<Artifacts, ExperimentError> {
    cfg.validate_homogeneous()?;
    let h = &cfg.homogeneous;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let mut art = Artifacts::new(&dir);
    let params = material_params(cfg).unwrap_or(MaterialParams {
        mu: cfg.material.mu,
        bulk: cfg.material.bulk,
        gc: cfg.material.gc,
        kappa: cfg.material.kappa,
        ell: cfg.ell(),
    });
    art.write_json(METADATA_FILE, &Metadata::new("homogeneous", cfg, params))?;

    let eps_star = h.params(0.0).eps_star_closed_form();
    let eps_max = h.eps_max_factor * eps_star;
    let mut table = String::from("kappa,eps_peak,sigma_peak,interior_peak\n");
    let mut rows = Vec::new();
    for (i, &kappa) in h.kappas.iter().enumerate() {
        let p = h.params(kappa);
        let mut csv = String::from("eps,sigma\n");
        for (e, s) in stress_strain_curve(&p, eps_max, h.points) {
            csv.push_str(&format!("{e:e},{s:e}\n"));
        }
        art.write(&format!("stress_strain_{i:02}.csv"), csv)?;
        let (e, s) = peak_stress(&p);
        // a maximum pinned to the bracket end is no interior peak
        let interior = e < 0.999 * 10.0 * p.eps_star_closed_form();
        table.push_str(&format!("{kappa:e},{e:e},{s:e},{}\n", u8::from(interior)));
        rows.push(json!({ "kappa": kappa, "eps_peak": e, "sigma_peak": s, "interior_peak": interior }));
    }
    art.write("peaks.csv", table)?;
    art.summary = json!({ "sigma_c_closed_form": h.params(0.0).sigma_c_closed_form(), "peaks": rows });
    Ok(art)
}

/// Forward runs over a list of values of one material parameter.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Artifacts, ExperimentError> {
    let sweep = cfg.validate_sweep()?.clone();
    let mesh = cfg.build_mesh()?;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let mut art = Artifacts::new(&dir);
    art.write_json(METADATA_FILE, &Metadata::new("sweep", cfg, material_params(cfg)?))?;

    let configs: Vec<ExperimentConfig> = sweep
        .values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match sweep.parameter {
                SweepParameter::Mu => c.material.mu = v,
                SweepParameter::Bulk => c.material.bulk = v,
                SweepParameter::Gc => c.material.gc = v,
                SweepParameter::Kappa => c.material.kappa = v,
                SweepParameter::Ell => c.material.ell = Some(v),
            }
            c
        })
        .collect();
    let curves: Vec<Result<LoadDispCurve, ExperimentError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                let mesh = &mesh;
                s.spawn(move || -> Result<LoadDispCurve, ExperimentError> {
                    let p = material_params(c)?;
                    let solver = PhaseFieldSolver::new(mesh, MaterialField::uniform(mesh, p), BoundaryConditions::tension(mesh), c.solver)?;
                    Ok(solver.run_load_stepping()?.0)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });

    let mut table = String::from("value,first_peak_step,first_peak_force,max_force,failure_step\n");
    let mut rows = Vec::new();
    for (i, (v, curve)) in sweep.values.iter().zip(curves).enumerate() {
        let curve = curve?;
        art.write(&format!("curve_{i:02}.csv"), curve.to_csv())?;
        let opt = |x: Option<String>| x.unwrap_or_default();
        let max_force = max_force_index(&curve).map(|k| curve.steps[k].force);
        table.push_str(&format!(
            "{v:e},{},{},{},{}\n",
            opt(curve.first_peak.map(|k| curve.steps[k].step.to_string())),
            opt(curve.peak_force().map(|f| format!("{f:e}"))),
            opt(max_force.map(|f| format!("{f:e}"))),
            opt(curve.failure.map(|k| curve.steps[k].step.to_string())),
        ));
        let mut row = curve_summary(&curve);
        row["value"] = json!(v);
        row["max_force"] = json!(max_force);
        rows.push(row);
    }
    art.write("sweep.csv", table)?;
    art.summary = json!({ "parameter": sweep.parameter, "runs": rows });
    Ok(art)
}
