use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;
use yume_kit::flow::{GaussianMixture, MixtureSpec};
use yume_kit::freq::{DenseProjector, KernelConfig, LowPass};
use yume_kit::sampler::{
    aam_sample, empirical_moments, euler_ode_sample, initial_noise, run_seeds, sde_sample, tts_sde_sample, CfgField,
    SamplerConfig, TimeSchedule, VelocityField,
};

use crate::error::{invalid, read_json, CliError};
use crate::Output;

#[derive(Deserialize, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum SamplerName {
    Euler,
    Sde,
    TtsSde,
    Aam,
}

#[derive(Deserialize, Debug)]
#[serde(untagged)]
enum MixtureSource {
    Path(PathBuf),
    Inline(MixtureSpec),
}

/// Experiment file for `sample`. `mixture` is a path (relative to the config
/// file) or an inline `{"components": [...]}` object.
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SampleConfig {
    sampler: SamplerName,
    steps: Option<usize>,
    times: Option<Vec<f64>>,
    stage1_steps: Option<usize>,
    stage1_times: Option<Vec<f64>>,
    eta: Option<f64>,
    travel_interval: Option<usize>,
    travel_depth: Option<usize>,
    refine_steps: Option<usize>,
    cfg_scale: Option<f64>,
    #[serde(default)]
    cfg: bool,
    #[serde(default)]
    stage1_cfg: bool,
    mixture: MixtureSource,
    uncond_mixture: Option<MixtureSource>,
    stage1_mixture: Option<MixtureSource>,
    kernel: Option<KernelConfig>,
    #[serde(default = "default_seeds")]
    seeds: usize,
    #[serde(default)]
    base_seed: u64,
}

fn default_seeds() -> usize {
    100
}

fn load_mixture(src: &MixtureSource, base: &Path) -> Result<GaussianMixture, CliError> {
    let spec: MixtureSpec = match src {
        MixtureSource::Inline(spec) => spec.clone(),
        MixtureSource::Path(p) => read_json(&base.join(p))?,
    };
    GaussianMixture::from_spec(spec).map_err(invalid)
}

fn schedule(steps: Option<usize>, times: &Option<Vec<f64>>, what: &str) -> Result<TimeSchedule, CliError> {
    match (steps, times) {
        (_, Some(t)) => TimeSchedule::from_times(t).map_err(invalid),
        (Some(n), None) => TimeSchedule::uniform(n).map_err(invalid),
        (None, None) => Err(CliError::validation(
            "EmptySchedule",
            format!("{what} needs `steps` or `times`"),
        )),
    }
}

fn field<'a>(
    cond: &'a GaussianMixture,
    uncond: &'a GaussianMixture,
    cfg: bool,
    scale: f64,
) -> Result<Box<dyn VelocityField + 'a>, CliError> {
    if cfg {
        Ok(Box::new(CfgField::new(cond, uncond, scale).map_err(invalid)?))
    } else {
        Ok(Box::new(cond))
    }
}

pub fn run(config_path: &Path, seed: Option<u64>) -> Result<Output, CliError> {
    let cfg: SampleConfig = read_json(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let defaults = SamplerConfig::default();
    let sampler_cfg = SamplerConfig {
        eta: cfg.eta.unwrap_or(defaults.eta),
        travel_interval: cfg.travel_interval.unwrap_or(defaults.travel_interval),
        travel_depth: cfg.travel_depth.unwrap_or(defaults.travel_depth),
        refine_steps: cfg.refine_steps.unwrap_or(defaults.refine_steps),
        cfg_scale: cfg.cfg_scale.unwrap_or(defaults.cfg_scale),
        rng_seed: 0,
    };
    sampler_cfg.validate().map_err(invalid)?;
    if cfg.seeds == 0 {
        return Err(CliError::validation("BadArgument", "seeds must be positive".into()));
    }
    let base_seed = seed.unwrap_or(cfg.base_seed);

    let target = load_mixture(&cfg.mixture, base)?;
    let uncond = match &cfg.uncond_mixture {
        Some(m) => load_mixture(m, base)?,
        None => target.clone(),
    };
    let stage1_target = match &cfg.stage1_mixture {
        Some(m) => load_mixture(m, base)?,
        None => target.clone(),
    };
    let dim = target.dim();
    for (name, m) in [("uncond_mixture", &uncond), ("stage1_mixture", &stage1_target)] {
        if m.dim() != dim {
            return Err(CliError::validation(
                "DimensionMismatch",
                format!("{name} has dimension {} but mixture has {dim}", m.dim()),
            ));
        }
    }

    let sched = schedule(cfg.steps, &cfg.times, "sampler")?;
    let main_field = field(&target, &uncond, cfg.cfg, sampler_cfg.cfg_scale)?;
    let stage1_field = field(&stage1_target, &uncond, cfg.stage1_cfg, sampler_cfg.cfg_scale)?;
    let stage1_sched = if cfg.sampler == SamplerName::Aam && (cfg.stage1_steps.is_some() || cfg.stage1_times.is_some())
    {
        schedule(cfg.stage1_steps, &cfg.stage1_times, "stage 1")?
    } else {
        sched.clone()
    };
    let projector: Box<dyn LowPass> = match &cfg.kernel {
        Some(k) => Box::new(k.build().map_err(invalid)?),
        None => Box::new(DenseProjector::averaging(dim)),
    };

    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let runs = run_seeds(&seeds, |s, counter| {
        let z = initial_noise(s, dim);
        match cfg.sampler {
            SamplerName::Euler => euler_ode_sample(&*main_field, &sched, &z, counter),
            SamplerName::Sde => sde_sample(&*main_field, &sched, &z, sampler_cfg.eta, s, counter),
            SamplerName::TtsSde => {
                let c = SamplerConfig {
                    rng_seed: s,
                    ..sampler_cfg.clone()
                };
                tts_sde_sample(&*main_field, &sched, &z, &c, counter)
            }
            SamplerName::Aam => aam_sample(
                &*stage1_field,
                &*main_field,
                &stage1_sched,
                &sched,
                &*projector,
                sampler_cfg.refine_steps,
                &z,
                counter,
            ),
        }
    })
    .map_err(invalid)?;

    let samples: Vec<Vec<f64>> = runs.iter().map(|r| r.sample.clone()).collect();
    let (mean, cov) = empirical_moments(&samples);
    let target_mean: Vec<f64> = target.mean().iter().copied().collect();
    let target_cov = target.covariance();
    let target_cov: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| target_cov[(i, j)]).collect())
        .collect();
    let mean_error = mean
        .iter()
        .zip(&target_mean)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let cov_error = cov
        .iter()
        .flatten()
        .zip(target_cov.iter().flatten())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let components: Vec<usize> = samples.iter().map(|s| target.classify(s)).collect();
    let mut freq = vec![0.0; target.num_components()];
    for &k in &components {
        freq[k] += 1.0 / samples.len() as f64;
    }
    let nfe = runs[0].nfe;
    let nfe_total: u64 = runs.iter().map(|r| r.nfe).sum();

    let per_seed: Vec<serde_json::Value> = runs
        .iter()
        .zip(&components)
        .map(|(r, k)| json!({ "seed": r.seed, "sample": r.sample, "nfe": r.nfe, "component": k }))
        .collect();
    let mut table = String::new();
    let _ = writeln!(table, "sampler          {:?}", cfg.sampler);
    let _ = writeln!(table, "seeds            {} (from {base_seed})", seeds.len());
    let _ = writeln!(table, "nfe per sample   {nfe}");
    let _ = writeln!(table, "mean             {mean:.4?}");
    let _ = writeln!(table, "target mean      {target_mean:.4?}");
    let _ = writeln!(table, "mean error       {mean_error:.4}");
    let _ = writeln!(table, "cov error (F)    {cov_error:.4}");
    let _ = writeln!(table, "component freq   {freq:.4?}");
    let _ = writeln!(table, "target weights   {:.4?}", target.weights());

    let json = json!({
        "sampler": cfg.sampler,
        "config": sampler_cfg,
        "schedule": sched.visit_order(),
        "base_seed": base_seed,
        "samples": per_seed,
        "mean": mean,
        "covariance": cov,
        "target_mean": target_mean,
        "target_covariance": target_cov,
        "mean_error": mean_error,
        "covariance_error": cov_error,
        "component_frequencies": freq,
        "target_weights": target.weights(),
        "nfe": nfe,
        "nfe_total": nfe_total,
    });
    Ok(Output {
        json,
        table,
        seed: Some(base_seed),
    })
}
