use std::fmt::Write as _;
use std::path::Path;

use clap::{Args, ValueEnum};
use serde_json::json;
use yume_kit::context::{framepack_plan_with, token_count, Schedule};
use yume_kit::flow::IsotropicGaussian;
use yume_kit::freq::{KernelConfig, SeparableOperator2D};
use yume_kit::motion::{
    self, annotate_trajectory, downsample, jitter_score, QuantizerConfig, Trajectory, TrajectoryError,
};
use yume_kit::mvdt::{
    block_importance_scores, drifting_sequence, select_cacheable_layers, CachePlan, Precision, ToyBlockStack,
    DEFAULT_BLOCKS, DEFAULT_CACHEABLE,
};
use yume_kit::sampler::{aam_sample, euler_ode_sample, initial_noise, NfeCounter, TimeSchedule};

use crate::error::{invalid, read_json, CliError};
use crate::Output;

pub fn quantize(trajectory: &Path, config: Option<&Path>) -> Result<Output, CliError> {
    let cfg: QuantizerConfig = match config {
        Some(p) => read_json(p)?,
        None => QuantizerConfig::default(),
    };
    let traj = Trajectory::from_path(trajectory)?;
    let a = annotate_trajectory(&traj.poses, &cfg)?;
    let mut table = format!("{:>6}  {:<34} {:>10}\n", "index", "motion", "distance");
    for l in &a.labels {
        let _ = writeln!(
            table,
            "{:>6}  {:<34} {:>10.6}",
            l.segment_index, l.motion_name, l.distance_to_canonical
        );
    }
    let _ = writeln!(table, "\n{}", a.condition_text);
    if let Some(j) = a.jitter_score {
        let _ = writeln!(
            table,
            "jitter {j:.4}{}",
            if a.jitter_rejected { " (rejected)" } else { "" }
        );
    }
    let json = serde_json::to_value(&a).map_err(|e| CliError::internal(e.to_string()))?;
    Ok(Output {
        json,
        table,
        seed: None,
    })
}

pub fn speed_stats(trajectory: &Path, stride: usize) -> Result<Output, CliError> {
    let traj = Trajectory::from_path(trajectory)?;
    let poses = downsample(&traj.poses, stride).map_err(TrajectoryError::from)?;
    let stats = motion::speed_stats(&poses).map_err(TrajectoryError::from)?;
    let jitter = jitter_score(&stats, std::f64::consts::FRAC_PI_6).ok();
    let mut table = format!("{:>6} {:>12} {:>12} {:>12}\n", "seg", "speed", "dir_change", "rotation");
    for i in 0..stats.translations.len() {
        let t = stats.translations[i];
        let speed = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        let dir = if i == 0 {
            String::from("-")
        } else {
            format!("{:.6}", stats.direction_angles[i - 1])
        };
        let _ = writeln!(
            table,
            "{:>6} {:>12.6} {:>12} {:>12.6}",
            i, speed, dir, stats.rotation_angles[i]
        );
    }
    let json = json!({
        "fps": traj.fps,
        "stride": stride,
        "speed_stats": stats,
        "mean_translation_speed": stats.mean_translation_speed(),
        "mean_rotation_angle": stats.mean_rotation_angle(),
        "jitter_score": jitter,
    });
    Ok(Output {
        json,
        table,
        seed: None,
    })
}

pub fn framepack(history: usize, h: usize, w: usize, early: bool) -> Result<Output, CliError> {
    let schedule = if early { Schedule::Early } else { Schedule::Finalized };
    let plan = framepack_plan_with(schedule, history, h, w).map_err(invalid)?;
    let total = token_count(&plan);
    let json = json!({
        "schedule": schedule,
        "plan": plan,
        "tier_tokens": plan.tiers.iter().map(|t| t.tokens()).collect::<Vec<_>>(),
        "initial_frame_tokens": plan.initial_frame_grid.tokens(),
        "token_count": total,
    });
    Ok(Output {
        table: plan.to_table(),
        json,
        seed: None,
    })
}

#[derive(Args, Debug, Clone)]
pub struct CacheProfileArgs {
    /// Cached steps after each full compute.
    #[arg(long, default_value_t = 2)]
    pub lc: usize,
    /// Number of cacheable layers to select.
    #[arg(long, default_value_t = DEFAULT_CACHEABLE)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCKS)]
    pub blocks: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub tokens: usize,
    #[arg(long, default_value_t = 12)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub videos: usize,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheProfileConfig {
    seed: Option<u64>,
    lc: Option<usize>,
    k: Option<usize>,
    blocks: Option<usize>,
    dim: Option<usize>,
    tokens: Option<usize>,
    steps: Option<usize>,
    videos: Option<usize>,
}

pub fn cache_profile(args: &CacheProfileArgs, seed: Option<u64>, config: Option<&Path>) -> Result<Output, CliError> {
    let mut a = args.clone();
    let mut seed = seed;
    if let Some(p) = config {
        let c: CacheProfileConfig = read_json(p)?;
        seed = seed.or(c.seed);
        a.lc = c.lc.unwrap_or(a.lc);
        a.k = c.k.unwrap_or(a.k);
        a.blocks = c.blocks.unwrap_or(a.blocks);
        a.dim = c.dim.unwrap_or(a.dim);
        a.tokens = c.tokens.unwrap_or(a.tokens);
        a.steps = c.steps.unwrap_or(a.steps);
        a.videos = c.videos.unwrap_or(a.videos);
    }
    let seed = seed.unwrap_or(0);
    for (name, v) in [
        ("lc", a.lc),
        ("blocks", a.blocks),
        ("dim", a.dim),
        ("tokens", a.tokens),
        ("steps", a.steps),
        ("videos", a.videos),
    ] {
        if v == 0 {
            return Err(CliError::validation("BadArgument", format!("{name} must be positive")));
        }
    }
    let stack = ToyBlockStack::new(a.blocks, a.dim, seed);
    let videos: Vec<_> = (0..a.videos as u64)
        .map(|v| drifting_sequence(a.steps, a.tokens, a.dim, seed.wrapping_mul(1000).wrapping_add(v + 1)))
        .collect();
    let scores = block_importance_scores(&stack, &videos, a.lc).map_err(invalid)?;
    let selected = select_cacheable_layers(&scores, a.k).map_err(invalid)?;
    let ranked = select_cacheable_layers(&scores, scores.len()).map_err(invalid)?;
    let plan = CachePlan::new(selected.iter().copied(), a.lc, Precision::Bf16);

    let mut table = format!("{:>5} {:>6} {:>14}  {}\n", "rank", "block", "mse", "cached");
    for (rank, &b) in ranked.iter().enumerate() {
        let mark = if rank < a.k { "*" } else { "" };
        let _ = writeln!(table, "{:>5} {:>6} {:>14.6e}  {}", rank + 1, b, scores[b], mark);
    }
    let json = json!({
        "seed": seed,
        "blocks": a.blocks,
        "l_c": a.lc,
        "k": a.k,
        "scores": scores,
        "selected": selected,
        "cache_plan": plan,
    });
    Ok(Output {
        json,
        table,
        seed: Some(seed),
    })
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKernel {
    /// Height [0.1, 0.8, 0.1], width [0.2, 0.6, 0.2].
    Reference,
    /// 3-tap box blur; rank-deficient along a 32-row height.
    Box,
}

#[derive(Args, Debug, Clone)]
pub struct AamDemoArgs {
    #[arg(long, value_enum, default_value_t = DemoKernel::Reference)]
    pub kernel: DemoKernel,
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, default_value_t = 5)]
    pub refine: usize,
}

const DEMO_H: usize = 32;
const DEMO_W: usize = 48;

fn demo_targets() -> (IsotropicGaussian, IsotropicGaussian) {
    let tau = std::f64::consts::TAU;
    let smooth: Vec<f64> = (0..DEMO_H * DEMO_W)
        .map(|p| {
            let (i, j) = ((p / DEMO_W) as f64, (p % DEMO_W) as f64);
            (tau * i / DEMO_H as f64).sin() * (tau * j / DEMO_W as f64).cos()
        })
        .collect();
    let artifacted: Vec<f64> = smooth
        .iter()
        .enumerate()
        .map(|(p, v)| {
            v + if (p / DEMO_W + p % DEMO_W).is_multiple_of(2) {
                0.5
            } else {
                -0.5
            }
        })
        .collect();
    (
        IsotropicGaussian {
            mean: smooth,
            sigma: 0.05,
        },
        IsotropicGaussian {
            mean: artifacted,
            sigma: 0.05,
        },
    )
}

fn energy_stats(op: &SeparableOperator2D, z: &[f64], reference: &[f64]) -> Result<serde_json::Value, CliError> {
    let n = z.len() as f64;
    let low = op.low_pass(z).map_err(invalid)?;
    let high = op.null_space_project(z).map_err(invalid)?;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / n;
    let mut grad = 0.0;
    for i in 0..DEMO_H {
        for j in 0..DEMO_W {
            let p = i * DEMO_W + j;
            if j + 1 < DEMO_W {
                grad += (z[p + 1] - z[p]).powi(2);
            }
            if i + 1 < DEMO_H {
                grad += (z[p + DEMO_W] - z[p]).powi(2);
            }
        }
    }
    let diff: Vec<f64> = z.iter().zip(reference).map(|(a, b)| a - b).collect();
    Ok(json!({
        "energy": sq(z),
        "low_pass_energy": sq(&low),
        "null_space_energy": sq(&high),
        "gradient_energy": grad / n,
        "mse_to_smooth_target": sq(&diff),
    }))
}

pub fn aam_demo(args: &AamDemoArgs, seed: Option<u64>) -> Result<Output, CliError> {
    let seed = seed.unwrap_or(0);
    let kernel = match args.kernel {
        DemoKernel::Reference => KernelConfig::reference(DEMO_H, DEMO_W),
        DemoKernel::Box => KernelConfig {
            kernel_h: vec![1.0 / 3.0; 3],
            kernel_w: vec![1.0 / 3.0; 3],
            h: DEMO_H,
            w: DEMO_W,
        },
    };
    let op = kernel.build().map_err(invalid)?;
    let schedule = TimeSchedule::uniform(args.steps).map_err(invalid)?;
    let (stage1, stage2) = demo_targets();
    let z_noise = initial_noise(seed, DEMO_H * DEMO_W);

    let mut plain_nfe = NfeCounter::new();
    let plain = euler_ode_sample(&stage2, &schedule, &z_noise, &mut plain_nfe).map_err(invalid)?;
    let mut aam_nfe = NfeCounter::new();
    let refined = aam_sample(
        &stage1,
        &stage2,
        &schedule,
        &schedule,
        &op,
        args.refine,
        &z_noise,
        &mut aam_nfe,
    )
    .map_err(invalid)?;

    let before = energy_stats(&op, &plain, &stage1.mean)?;
    let after = energy_stats(&op, &refined, &stage1.mean)?;
    let (rh, rw) = op.ranks();
    let mut table = format!("{:<22} {:>12} {:>12}\n", "statistic", "euler", "aam");
    for key in [
        "energy",
        "low_pass_energy",
        "null_space_energy",
        "gradient_energy",
        "mse_to_smooth_target",
    ] {
        let _ = writeln!(
            table,
            "{:<22} {:>12.6} {:>12.6}",
            key,
            before[key].as_f64().unwrap_or(f64::NAN),
            after[key].as_f64().unwrap_or(f64::NAN)
        );
    }
    let _ = writeln!(table, "{:<22} {:>12} {:>12}", "nfe", plain_nfe.count(), aam_nfe.count());
    let _ = writeln!(table, "operator rank {rh}/{DEMO_H} x {rw}/{DEMO_W}");
    let json = json!({
        "seed": seed,
        "kernel": kernel,
        "steps": args.steps,
        "refine_steps": args.refine,
        "operator_rank": [rh, rw],
        "before": before,
        "after": after,
        "nfe": { "euler": plain_nfe.count(), "aam": aam_nfe.count() },
    });
    Ok(Output {
        json,
        table,
        seed: Some(seed),
    })
}
