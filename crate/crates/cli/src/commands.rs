use crate::output::{Cell, Output, Record, Table};
use crate::{CliError, CovectorArgs, Mode, QuadArgs, Tolerances};
use nilsynth::expmap::GeodesicPoint;
use nilsynth::sampling::random_covector;
use nilsynth::skew::SkewMatrix;
use nilsynth::volume::{density_from_volume, SweepFlag};
use nilsynth::{
    classify_pair, cut_equals_conjugate, cut_time, first_conjugate_time, geodesic_closed_form, maxwell_partner,
    nilpotent_ball_volume, Covector, Error, MetricSpec, OracleConfig, QuadratureConfig, QuadratureMode,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub fn read_spec(path: Option<&Path>) -> Result<MetricSpec, CliError> {
    let path = path.ok_or_else(|| CliError::Input("--spec is required for this command".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    MetricSpec::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn covector(spec: &MetricSpec, a: &CovectorArgs) -> Result<Covector, CliError> {
    if a.u0.len() != spec.m() {
        return Err(CliError::Input(format!("--u0 needs {} entries, got {}", spec.m(), a.u0.len())));
    }
    if a.r.len() != spec.k() {
        return Err(CliError::Input(format!("--r needs {} entries, got {}", spec.k(), a.r.len())));
    }
    Ok(Covector::from_slices(&a.u0, &a.r))
}

fn list(v: &nalgebra::DVector<f64>) -> Cell {
    Cell::List(v.iter().copied().collect())
}

fn kind_name<T: std::fmt::Debug>(v: &T) -> String {
    format!("{v:?}")
}

pub fn geodesic(
    spec: &MetricSpec,
    a: &CovectorArgs,
    times: &[f64],
    t_max: Option<f64>,
    steps: usize,
    at_cut: bool,
    tol: &Tolerances,
) -> Result<Output, CliError> {
    let cov = covector(spec, a)?;
    let tc = cut_time(spec, &cov)?;
    let mut grid: Vec<f64> = times.to_vec();
    if let Some(t) = t_max {
        if steps == 0 {
            return Err(CliError::Input("--steps must be positive".into()));
        }
        grid.extend((0..=steps).map(|i| t * i as f64 / steps as f64));
    }
    if at_cut && tc.is_finite() {
        grid.push(tc);
    }
    if grid.is_empty() {
        return Err(CliError::Input("no times requested: use --times, --t-max or --at-cut".into()));
    }
    if let Some(t) = grid.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(CliError::Input(format!("times must be finite and nonnegative, got {t}")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (m, k) = (spec.m(), spec.k());
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=m).map(|i| format!("x{i}")));
    columns.extend((1..=k).map(|h| format!("y{h}")));
    columns.push("flag".into());
    let mut rows = Vec::with_capacity(grid.len());
    for t in grid {
        let p = geodesic_closed_form(spec, &cov, t)?;
        let flag = if tc.is_finite() && (t - tc).abs() <= tol.cut_flag * tc {
            "cut"
        } else if t > tc {
            "beyond_cut"
        } else {
            ""
        };
        let mut row = vec![Cell::Num(t)];
        row.extend(p.x.iter().chain(p.y.iter()).map(|v| Cell::Num(*v)));
        row.push(flag.into());
        rows.push(row);
    }
    Ok(Output::Table(Table { columns, rows }))
}

pub fn cut(spec: &MetricSpec, a: &CovectorArgs) -> Result<Output, CliError> {
    let cov = covector(spec, a)?;
    Ok(Output::Record(Record::default().with("cut_time", cut_time(spec, &cov)?)))
}

pub fn maxwell(spec: &MetricSpec, a: &CovectorArgs) -> Result<Output, CliError> {
    let cov = covector(spec, a)?;
    let p = maxwell_partner(spec, &cov)?;
    Ok(Output::Record(
        Record::default()
            .with("cut_time", p.cut_time)
            .with("omega_tilde", p.omega_tilde)
            .with("partner_u0", list(&p.partner.u0))
            .with("partner_r", list(&p.partner.r))
            .with("endpoint_gap", p.endpoint_gap)
            .with("velocity_gap", p.velocity_gap),
    ))
}

pub fn conjugate(spec: &MetricSpec, a: &CovectorArgs, horizon: f64) -> Result<Output, CliError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(CliError::Input(format!("--horizon must be positive, got {horizon}")));
    }
    let cov = covector(spec, a)?;
    let tc = cut_time(spec, &cov)?;
    if !tc.is_finite() {
        return Err(CliError::Lib(Error::ZeroVertical));
    }
    let tj = first_conjugate_time(spec, &cov, horizon * tc)?;
    Ok(Output::Record(
        Record::default()
            .with("cut_time", tc)
            .with("t_max", horizon * tc)
            .with("conjugate_time", tj)
            .with("conjugate_minus_cut", tj.map(|t| t - tc)),
    ))
}

fn require_46(spec: &MetricSpec, what: &str) -> Result<(), CliError> {
    if spec.m() != 4 || spec.k() != 2 {
        return Err(CliError::Input(format!("{what} needs m = 4, k = 2, got m = {}, k = {}", spec.m(), spec.k())));
    }
    Ok(())
}

pub fn classify(spec: &MetricSpec, tol: &Tolerances) -> Result<Output, CliError> {
    require_46(spec, "classification")?;
    let c = classify_pair(spec.l(0), spec.l(1), tol.classify)?;
    Ok(Output::Record(
        Record::default()
            .with("kind", kind_name(&c.kind))
            .with("sigma_class", kind_name(&c.sigma_class))
            .with("cut_is_conjugate", c.cut_is_conjugate())
            .with("double_eigenvalue_angles", Cell::List(c.double_eigenvalue_angles)),
    ))
}

pub fn report(spec: &MetricSpec, samples: usize, jacobian_samples: usize, seed: u64) -> Result<Output, CliError> {
    if samples == 0 || jacobian_samples == 0 {
        return Err(CliError::Input("sample counts must be positive".into()));
    }
    let (m, k) = (spec.m(), spec.k());
    let mut summary = Record::default().with("m", m).with("k", k);
    if m == 4 && k == 2 {
        let v = cut_equals_conjugate(spec, jacobian_samples, seed)?;
        summary.push("kind", kind_name(&v.classification.kind));
        summary.push("sigma_class", kind_name(&v.classification.sigma_class));
        summary.push("p1_structural", v.classification.cut_is_conjugate());
        summary.push("p2_sampled", v.equal);
        summary.push("witness_normalized_jacobian", v.witness.jacobian.normalized);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = ["index", "u0", "r", "cut_time", "conjugate_time", "conjugate_minus_cut", "maxwell_gap"];
    let mut rows = Vec::with_capacity(samples);
    for i in 0..samples {
        let cov = random_covector(&mut rng, m, k, 0.5, 2.0);
        let tc = cut_time(spec, &cov)?;
        let tj = first_conjugate_time(spec, &cov, 2.0 * tc)?;
        let gap = match maxwell_partner(spec, &cov) {
            Ok(p) => Cell::Num(p.endpoint_gap),
            Err(Error::DegenerateVariation(_)) => Cell::Null,
            Err(e) => return Err(e.into()),
        };
        rows.push(vec![
            Cell::from(i),
            list(&cov.u0),
            list(&cov.r),
            Cell::Num(tc),
            tj.into(),
            tj.map(|t| t - tc).into(),
            gap,
        ]);
    }
    let samples = Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows };
    Ok(Output::Report { summary, samples })
}

pub fn distance(spec: &MetricSpec, x: &[f64], y: &[f64], oracle: bool, seed: u64) -> Result<Output, CliError> {
    if x.len() != spec.m() || y.len() != spec.k() {
        return Err(CliError::Input(format!("target needs {} x and {} y entries", spec.m(), spec.k())));
    }
    let target = GeodesicPoint {
        x: nalgebra::DVector::from_column_slice(x),
        y: nalgebra::DVector::from_column_slice(y),
        t: 0.0,
    };
    let g = nilsynth::synthesis::shoot_pre_cut(spec, &target)?;
    let mut r = Record::default()
        .with("distance", g.time)
        .with("u0", list(&g.covector.u0))
        .with("r", list(&g.covector.r))
        .with("residual", g.residual);
    if oracle {
        let o = nilsynth::brute_force_distance_with(spec, &target, &OracleConfig { seed, ..OracleConfig::default() })?;
        r.push("oracle_upper_bound", o.distance);
    }
    Ok(Output::Record(r))
}

fn quad_config(a: &QuadArgs, seed: u64, tol: &Tolerances) -> QuadratureConfig {
    let base = QuadratureConfig::default();
    let mode = match a.mode {
        Mode::Tensor => QuadratureMode::Tensor,
        Mode::MonteCarlo => QuadratureMode::MonteCarlo,
    };
    QuadratureConfig {
        theta_nodes: a.theta_nodes.unwrap_or(base.theta_nodes),
        r_nodes: a.r_nodes.unwrap_or(base.r_nodes),
        mc_samples: a.mc_samples.unwrap_or(base.mc_samples),
        mode,
        rel_target: match mode {
            QuadratureMode::Tensor => Some(tol.volume_rel),
            QuadratureMode::MonteCarlo => None,
        },
        seed,
        ..base
    }
}

fn prepare(spec: &MetricSpec, a: &QuadArgs) -> Result<MetricSpec, CliError> {
    require_46(spec, "volume")?;
    if a.normalize {
        Ok(spec.normalize()?)
    } else if !spec.is_normalized() {
        Err(CliError::Input("metric is not Hilbert-Schmidt normalized; pass --normalize".into()))
    } else {
        Ok(spec.clone())
    }
}

pub fn volume(spec: &MetricSpec, a: &QuadArgs, seed: u64, tol: &Tolerances) -> Result<Output, CliError> {
    let spec = prepare(spec, a)?;
    let cfg = quad_config(a, seed, tol);
    let v = nilpotent_ball_volume(&spec, &cfg)?;
    Ok(Output::Record(
        Record::default()
            .with("mode", kind_name(&cfg.mode).to_lowercase())
            .with("volume", v.value)
            .with("error_estimate", v.error_estimate)
            .with("nodes_used", v.nodes_used)
            .with("density", density_from_volume(&spec, &v)),
    ))
}

pub fn density(spec: &MetricSpec, a: &QuadArgs, seed: u64, tol: &Tolerances) -> Result<Output, CliError> {
    let spec = prepare(spec, a)?;
    let cfg = quad_config(a, seed, tol);
    let v = nilpotent_ball_volume(&spec, &cfg)?;
    Ok(Output::Record(
        Record::default()
            .with("density", density_from_volume(&spec, &v))
            .with("volume", v.value)
            .with("error_estimate", v.error_estimate),
    ))
}

/// Volume along `p -> normalize((1 - p) L_start + p L_end)`.
pub fn sweep(
    start: &MetricSpec,
    end: &MetricSpec,
    from: f64,
    to: f64,
    points: usize,
    a: &QuadArgs,
    seed: u64,
    tol: &Tolerances,
) -> Result<Output, CliError> {
    require_46(start, "sweep")?;
    require_46(end, "sweep")?;
    if points < 2 || !(to > from) {
        return Err(CliError::Input("sweep needs --points >= 2 and --to > --from".into()));
    }
    let cfg = quad_config(a, seed, tol);
    let family = |p: f64| -> nilsynth::Result<MetricSpec> {
        let l = (0..2).map(|h| SkewMatrix::lin_comb(1.0 - p, start.l(h), p, end.l(h))).collect::<nilsynth::Result<Vec<_>>>()?;
        MetricSpec::new(l)?.normalize()
    };
    let grid: Vec<f64> = (0..points).map(|i| from + (to - from) * i as f64 / (points - 1) as f64).collect();
    let table = nilsynth::family_sweep(family, &grid, &cfg)?;
    let columns = ["parameter", "V", "dV_dp", "sigma_class", "flags"];
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let flags: Vec<&str> = r
                .flags
                .iter()
                .map(|f| match f {
                    SweepFlag::OneSided => "one_sided",
                    SweepFlag::Jump => "jump",
                })
                .collect();
            vec![Cell::Num(r.parameter), Cell::Num(r.volume), Cell::Num(r.dv_dp), kind_name(&r.sigma_class).into(), flags.join(";").into()]
        })
        .collect();
    Ok(Output::Table(Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows }))
}
