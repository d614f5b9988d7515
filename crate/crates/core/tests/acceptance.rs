//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! straight to stdout (bypassing the test harness capture) and then asserts.
//! Every test holds `SERIAL` so wall-clock limits and timings are measured
//! without competing tests on the same cores.

use std::io::Write as _;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use untangle_core::detector::{walk_and_classify, Fragment, FragmentBuffer};
use untangle_core::fixtures::{
    crossed_tube, elbow_penetration_pose, hand_in_torso, mixed_area_pair, noisy_recovery, two_spheres,
    two_spheres_gap,
};
use untangle_core::optim::{bench, mean_joint_error};
use untangle_core::oracle::{agreement, finite_difference, oracle_classify_default};
use untangle_core::penalty::laplacian_term;
use untangle_core::{
    build_toy_body, classify, fit_pose_2d, generate, remove_pose_space, remove_vertex_space, spt_gradient,
    spt_value, volume_derivative, BodyConfig, Camera, Label, MeshKind, OptimConfig, PoseParams, Rays,
    ShapeParams, SkinnedModel, Targets, Termination, TriMesh, ViewAxis,
};

static SERIAL: Mutex<()> = Mutex::new(());

const AGREEMENT_MIN: f64 = 0.99;
const VOLUME_REL_TOL: f64 = 1e-9;
const VOLUME_STEP_OF_DIAG: f64 = 1e-3;
const NON_INCREASING_MIN: f64 = 0.9;
const MAX_JOINT_ERROR_PX: f64 = 2.0;
const RAY_RATIO_MAX: f64 = 2.0;
const BODY_FIT_R2_MIN: f64 = 0.95;
const FD_CONFIGS: usize = 50;
const POSE_FD_STEP: f64 = 1e-6;
const POSE_FD_REL_TOL: f64 = 1e-4;
const LAPLACIAN_FD_STEP: f64 = 1e-4;
const LAPLACIAN_FD_REL_TOL: f64 = 1e-6;

fn report(n: u32, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let within = elapsed <= limit;
    let verdict = if pass && within { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {n:>2} {verdict} {name}: {detail} [{:.2} s of {} s]\n",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}): {detail}");
    assert!(within, "criterion {n} ({name}) took {elapsed:?}, limit {limit:?}");
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn icosphere(subdivisions: u32) -> TriMesh {
    generate(&MeshKind::Sphere {
        radius: 1.0,
        subdivisions,
    })
    .unwrap()
}

fn toy() -> SkinnedModel {
    build_toy_body(&BodyConfig::default()).unwrap()
}

fn default_rays() -> Rays {
    Rays::square(512)
}

#[test]
fn c01_clean_sphere_has_zero_penalty_and_gradient() {
    let _g = serial();
    let start = Instant::now();
    let mesh = icosphere(3);
    let c = classify(&mesh, default_rays(), ViewAxis::PosZ).unwrap();
    let value = spt_value(&c, mesh.num_vertices()).unwrap().spt;
    let normalized = spt_gradient(&mesh, &c, true).unwrap();
    let raw = spt_gradient(&mesh, &c, false).unwrap();
    let zero = |v: &[Vector3<f64>]| v.iter().all(|g| g.x == 0.0 && g.y == 0.0 && g.z == 0.0);
    let pass = value == 0.0 && zero(&normalized.vectors) && zero(&raw.vectors);
    report(
        1,
        "ideal penalty on a clean sphere",
        pass,
        start.elapsed(),
        Duration::from_secs(1),
        &format!(
            "spt={value}, nonzero gradient components {} normalized / {} raw",
            normalized.nonzero(),
            raw.nonzero()
        ),
    );
}

fn walk(pattern: &[bool]) -> Vec<Label> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for i in 0..pattern.len() {
        let z = i as f64;
        vertices.push(nalgebra::Point3::new(0.0, 0.0, z));
        vertices.push(nalgebra::Point3::new(1.0, 0.0, z));
        vertices.push(nalgebra::Point3::new(0.0, 1.0, z));
        faces.push([3 * i, 3 * i + 1, 3 * i + 2]);
    }
    let mesh = TriMesh::new(vertices, faces);
    let list = pattern
        .iter()
        .enumerate()
        .map(|(i, &front)| Fragment::new(i, i as f64, front))
        .collect();
    let c = walk_and_classify(&mesh, &FragmentBuffer::from_lists(vec![list]));
    (0..pattern.len()).map(|i| c.labels[3 * i]).collect()
}

#[test]
fn c02_counter_walk_table() {
    use Label::*;
    let _g = serial();
    let start = Instant::now();
    const F: bool = true;
    const B: bool = false;
    let cases: [(&[bool], Vec<Label>); 3] = [
        (&[F, B], vec![V0, V0]),
        (&[F, F, B, B], vec![V0, Vout, Vout, V0]),
        (&[F, B, B, F], vec![V0, V0, Vin, Vin]),
    ];
    let mut detail = Vec::new();
    let mut pass = true;
    for (pattern, expected) in &cases {
        let got = walk(pattern);
        pass &= &got == expected;
        detail.push(format!("{got:?}"));
    }
    report(
        2,
        "counter walk labels",
        pass,
        start.elapsed(),
        Duration::from_secs(1),
        &detail.join(" "),
    );
}

#[test]
fn c03_detector_agrees_with_winding_oracle() {
    let _g = serial();
    let start = Instant::now();
    let model = toy();
    let mut fixtures = Vec::new();
    for d in [0.5, 1.0, 1.5] {
        fixtures.push((format!("spheres d={d}"), two_spheres(1.0, 6, d, Vector3::z()).unwrap()));
    }
    fixtures.push(("bent tube".into(), crossed_tube(256).unwrap()));
    let pose = elbow_penetration_pose(&model).unwrap();
    fixtures.push(("elbow 150".into(), model.pose_mesh(&pose, &model.unit_shape()).unwrap()));

    let mut pass = true;
    let mut detail = Vec::new();
    for (name, mesh) in &fixtures {
        let c = classify(mesh, default_rays(), ViewAxis::PosZ).unwrap();
        let oracle = oracle_classify_default(mesh);
        let a = agreement(mesh, &c.labels, &oracle, &c.diagnostics.skipped_faces);
        pass &= a.ratio() >= AGREEMENT_MIN && c.num_intersecting() > 0;
        detail.push(format!(
            "{name} {:.4} ({} indeterminate)",
            a.ratio(),
            a.indeterminate
        ));
    }
    report(
        3,
        "detector and oracle agree",
        pass,
        start.elapsed(),
        Duration::from_secs(30),
        &detail.join(", "),
    );
}

#[test]
fn c04_volume_derivative_is_exact() {
    let _g = serial();
    let start = Instant::now();
    let mesh = icosphere(3);
    let len = VOLUME_STEP_OF_DIAG * mesh.bbox_diagonal();
    let base = mesh.signed_volume();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let v = rng.random_range(0..mesh.num_vertices());
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let d = dir.normalize() * len;
        let mut moved = mesh.clone();
        moved.vertices[v] += d;
        let actual = moved.signed_volume() - base;
        let predicted = volume_derivative(&mesh, v).unwrap().dot(&d);
        worst = worst.max((actual - predicted).abs() / predicted.abs());
    }
    report(
        4,
        "volume derivative is exact",
        worst <= VOLUME_REL_TOL,
        start.elapsed(),
        Duration::from_secs(1),
        &format!("worst relative error {worst:.2e} over 20 vertices"),
    );
}

#[test]
fn c05_vertex_space_removal() {
    let _g = serial();
    let start = Instant::now();
    let cfg = OptimConfig::default();
    let mut pass = cfg.learning_rate == 1e-4 && cfg.max_iters == 500 && cfg.normalize_gradient;
    let mut detail = Vec::new();
    for (name, mesh) in [
        ("two spheres", two_spheres_gap(3, -1.0).unwrap()),
        ("bent tube", crossed_tube(64).unwrap()),
    ] {
        let (_, trace) = remove_vertex_space(&mesh, &cfg).unwrap();
        let frac = trace.non_increasing_fraction();
        pass &= trace.termination == Termination::SptZero
            && trace.final_spt() == 0.0
            && frac >= NON_INCREASING_MIN;
        detail.push(format!(
            "{name}: {:?} after {} iterations, non-increasing {:.3}",
            trace.termination,
            trace.final_record().iter,
            frac
        ));
    }
    report(
        5,
        "vertex-space removal",
        pass,
        start.elapsed(),
        Duration::from_secs(120),
        &detail.join("; "),
    );
}

#[test]
fn c06_pose_space_removal() {
    let _g = serial();
    let start = Instant::now();
    let model = toy();
    let pose = elbow_penetration_pose(&model).unwrap();
    let shape = model.unit_shape();
    let (_, trace) = remove_pose_space(&model, &pose, &shape, &OptimConfig::pose_removal()).unwrap();
    let initial = trace.iterations[0].spt;
    report(
        6,
        "pose-space removal",
        trace.termination == Termination::SptZero && trace.final_spt() == 0.0,
        start.elapsed(),
        Duration::from_secs(120),
        &format!(
            "spt {initial:.4} -> {} in {} iterations ({:?})",
            trace.final_spt(),
            trace.final_record().iter,
            trace.termination
        ),
    );
}

#[test]
fn c07_fitting_ablation() {
    let _g = serial();
    let start = Instant::now();
    let model = toy();
    let shape = model.unit_shape();
    let cfg = OptimConfig::fitting();

    let crafted = hand_in_torso(&model).unwrap();
    let (re_pose, re) = fit_pose_2d(&model, &shape, &crafted.targets, &crafted.init, &cfg, false).unwrap();
    let (spt_pose, spt) = fit_pose_2d(&model, &shape, &crafted.targets, &crafted.init, &cfg, true).unwrap();
    let re_err = mean_joint_error(&model, &re_pose, &shape, &crafted.targets).unwrap();
    let spt_err = mean_joint_error(&model, &spt_pose, &shape, &crafted.targets).unwrap();
    let mut pass = re.final_spt() > 0.0 && spt.final_spt() == 0.0 && spt_err <= MAX_JOINT_ERROR_PX;
    let mut detail = vec![
        format!("crafted RE-only spt {:.4} ({re_err:.2} px)", re.final_spt()),
        format!("RE+SPT spt {} ({spt_err:.2} px)", spt.final_spt()),
    ];

    for seed in 0..3 {
        let sc = noisy_recovery(&model, 0.2, seed).unwrap();
        let (pose, trace) = fit_pose_2d(&model, &shape, &sc.targets, &sc.init, &cfg, true).unwrap();
        let err = mean_joint_error(&model, &pose, &shape, &sc.targets).unwrap();
        pass &= err <= MAX_JOINT_ERROR_PX && trace.final_spt() == 0.0;
        detail.push(format!("recovery seed {seed} {err:.2} px"));
    }
    report(
        7,
        "fitting with and without the penalty",
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        &detail.join(", "),
    );
}

#[test]
fn c08_ray_count_insensitivity() {
    let _g = serial();
    let start = Instant::now();
    let model = toy();
    let table = bench(&model.template, &[Rays::square(128), Rays::square(2048)], &[1], 3, 10).unwrap();
    let ratio = table.ray_ratio.unwrap();
    let ms: Vec<String> = table
        .cells
        .iter()
        .map(|c| format!("{}x{} {:.2} ms", c.rays.rows, c.rays.cols, c.median_ms))
        .collect();
    report(
        8,
        "time insensitive to ray count",
        ratio <= RAY_RATIO_MAX,
        start.elapsed(),
        Duration::from_secs(120),
        &format!("2048/128 median ratio {ratio:.2} ({}, {} threads)", ms.join(", "), table.threads),
    );
}

#[test]
fn c09_linear_in_bodies() {
    let _g = serial();
    let start = Instant::now();
    let model = toy();
    let table = bench(&model.template, &[default_rays()], &[1, 2, 3, 4, 5], 3, 15).unwrap();
    let fit = table.body_fit.unwrap().per_body;
    report(
        9,
        "time linear in body count",
        fit.r_squared >= BODY_FIT_R2_MIN,
        start.elapsed(),
        Duration::from_secs(180),
        &format!(
            "slope {:.2} ms/body, intercept {:.2} ms, r2 {:.4}",
            fit.slope, fit.intercept, fit.r_squared
        ),
    );
}

#[test]
fn c10_normalization_ablation() {
    let _g = serial();
    let start = Instant::now();
    let mesh = mixed_area_pair().unwrap();
    let (_, normalized) = remove_vertex_space(&mesh, &OptimConfig::default()).unwrap();
    let raw_cfg = OptimConfig {
        normalize_gradient: false,
        ..Default::default()
    };
    let (_, raw) = remove_vertex_space(&mesh, &raw_cfg).unwrap();
    let artifact = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("unnormalized_trace.json");
    raw.save(&artifact).unwrap();
    report(
        10,
        "normalized gradient on mixed triangle areas",
        normalized.final_spt() == 0.0 && artifact.exists(),
        start.elapsed(),
        Duration::from_secs(120),
        &format!(
            "normalized {:?} at iteration {}; unnormalized {:?} spt {:.4}, trace at {}",
            normalized.termination,
            normalized.final_record().iter,
            raw.termination,
            raw.final_spt(),
            artifact.display()
        ),
    );
}

fn random_pose(model: &SkinnedModel, rng: &mut ChaCha8Rng, amplitude: f64) -> PoseParams {
    let mut pose = model.zero_pose();
    for r in &mut pose.rotations {
        *r = Vector3::from_fn(|_, _| rng.random_range(-amplitude..amplitude));
    }
    pose.translation = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    pose
}

fn random_shape(model: &SkinnedModel, rng: &mut ChaCha8Rng) -> ShapeParams {
    ShapeParams {
        scales: (0..model.num_joints()).map(|_| rng.random_range(0.8..1.25)).collect(),
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

// Worst relative error of the E_J gradient.
fn energy_gradient_error(model: &SkinnedModel, rng: &mut ChaCha8Rng) -> f64 {
    let pose = random_pose(model, rng, 1.0);
    let shape = random_shape(model, rng);
    let cam = Camera::new(rng.random_range(50.0..150.0), [256.0, 256.0]).unwrap();
    let mut targets = Targets::from_pose(model, &random_pose(model, rng, 1.0), &shape, cam).unwrap();
    for c in &mut targets.confidence {
        *c = rng.random_range(0.2..1.0);
    }
    let (_, g) = model.reprojection_energy(&pose, &shape, &targets).unwrap();
    let f = |x: &[f64]| {
        model
            .reprojection_energy(&PoseParams::from_slice(x).unwrap(), &shape, &targets)
            .unwrap()
            .0
    };
    let fd = finite_difference(f, &pose.to_vec(), POSE_FD_STEP).unwrap();
    rel(&g.to_vec(), &fd)
}

// Worst relative error over a few Jacobian columns.
fn jacobian_error(model: &SkinnedModel, rng: &mut ChaCha8Rng) -> f64 {
    let pose = random_pose(model, rng, 1.0);
    let shape = random_shape(model, rng);
    let jac = model.jacobian(&pose, &shape).unwrap();
    let dim = pose.to_vec().len();
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let index = rng.random_range(0..dim);
        let mut e = vec![0.0; dim];
        e[index] = 1.0;
        let col: Vec<f64> = jac
            .apply(&PoseParams::from_slice(&e).unwrap())
            .unwrap()
            .iter()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect();
        let eval = |sign: f64| -> Vec<f64> {
            let mut x = pose.to_vec();
            x[index] += sign * POSE_FD_STEP;
            let m = model.pose_mesh(&PoseParams::from_slice(&x).unwrap(), &shape).unwrap();
            m.vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
        };
        let (plus, minus) = (eval(1.0), eval(-1.0));
        let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * POSE_FD_STEP)).collect();
        if fd.iter().all(|x| *x == 0.0) && col.iter().all(|x| *x == 0.0) {
            continue;
        }
        worst = worst.max(rel(&fd, &col));
    }
    worst
}

// Worst per-component error of the Laplacian gradient, relative to the
// component (floored at the tolerance itself).
fn laplacian_error(reference: &TriMesh, rng: &mut ChaCha8Rng) -> f64 {
    let mut mesh = reference.clone();
    for _ in 0..5 {
        let v = rng.random_range(0..mesh.num_vertices());
        mesh.vertices[v] += Vector3::from_fn(|_, _| rng.random_range(-1e-2..1e-2));
    }
    let (_, g) = laplacian_term(&mesh, reference).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let v = rng.random_range(0..mesh.num_vertices());
        for k in 0..3 {
            let mut p = mesh.clone();
            let mut m = mesh.clone();
            p.vertices[v][k] += LAPLACIAN_FD_STEP;
            m.vertices[v][k] -= LAPLACIAN_FD_STEP;
            let fd = (laplacian_term(&p, reference).unwrap().0 - laplacian_term(&m, reference).unwrap().0)
                / (2.0 * LAPLACIAN_FD_STEP);
            let an = g.vectors[v][k];
            worst = worst.max((fd - an).abs() / an.abs().max(LAPLACIAN_FD_REL_TOL));
        }
    }
    worst
}

#[test]
fn c11_finite_difference_checks() {
    let _g = serial();
    let start = Instant::now();
    let model = toy();
    let reference = icosphere(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut e_j, mut jac, mut lap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..FD_CONFIGS {
        e_j = e_j.max(energy_gradient_error(&model, &mut rng));
        jac = jac.max(jacobian_error(&model, &mut rng));
        lap = lap.max(laplacian_error(&reference, &mut rng));
    }
    report(
        11,
        "finite-difference checks",
        e_j <= POSE_FD_REL_TOL && jac <= POSE_FD_REL_TOL && lap <= LAPLACIAN_FD_REL_TOL,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("{FD_CONFIGS} configurations: E_J {e_j:.1e}, LBS Jacobian {jac:.1e}, Laplacian {lap:.1e}"),
    );
}
