use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use untangle_core::fixtures::{hand_in_torso, mixed_area_pair, noisy_recovery, two_spheres_gap, FitScenario};
use untangle_core::mesh::BentTube;
use untangle_core::optim::{bench, mean_joint_error, BenchTable, TRACE_SCHEMA};
use untangle_core::{
    build_toy_body, classify, fit_pose_2d, generate, load_obj, remove_vertex_space, save_obj, BodyConfig, MeshKind,
    OptimConfig, PoseParams, SkinnedModel, Targets, TriMesh,
};

use crate::{BodyArgs, Command, Format, GenKind, ScenarioKind, ViewArgs};

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen { kind } => gen(kind),
        Command::Validate { mesh } => validate(&mesh),
        Command::Detect {
            mesh,
            view,
            labels,
            out,
        } => detect(&mesh, &view, labels, out.as_deref()),
        Command::Remove {
            mesh,
            lr,
            iters,
            snapshot_every,
            no_normalize,
            view,
            out,
        } => {
            let cfg = OptimConfig {
                learning_rate: lr,
                max_iters: iters,
                snapshot_every,
                normalize_gradient: !no_normalize,
                rays: view.rays,
                axis: view.axis,
                snapshot_dir: Some(out.clone()),
                ..Default::default()
            };
            remove(&mesh, cfg, &out)
        }
        Command::Scenario {
            kind,
            sigma,
            seed,
            body,
            out,
        } => scenario(kind, sigma, seed, &body, &out),
        Command::Fit {
            targets,
            init,
            use_spt: _,
            no_spt,
            lr,
            iters,
            spt_weight,
            patience,
            tolerance,
            snapshot_every,
            view,
            body,
            out,
        } => {
            let cfg = OptimConfig {
                learning_rate: lr,
                max_iters: iters,
                snapshot_every,
                rays: view.rays,
                axis: view.axis,
                spt_weight,
                patience,
                tolerance,
                snapshot_dir: Some(out.join("snapshots")),
                ..Default::default()
            };
            fit(&targets, init.as_deref(), !no_spt, cfg, &body, &out)
        }
        Command::Bench {
            rays_list,
            bodies_list,
            reps,
            warmup,
            format,
            body,
            out,
        } => {
            let model = load_body(&body)?;
            let table = bench(&model.template, &rays_list, &bodies_list, warmup, reps)?;
            let csv = bench_csv(&table);
            let text = serde_json::to_string_pretty(&table)?;
            if let Some(dir) = out {
                create_dir(&dir)?;
                write(&dir.join("bench.json"), &text)?;
                write(&dir.join("bench.csv"), &csv)?;
            }
            match format {
                Format::Json => emit(&(text + "\n"))?,
                Format::Csv => emit(&csv)?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads a mesh and refuses anything that is not a valid closed surface.
fn load_valid(path: &Path) -> Result<TriMesh> {
    let mesh = load_obj(path).with_context(|| format!("loading {}", path.display()))?;
    let report = mesh.validate();
    if !report.is_valid() {
        bail!("{} is not a valid closed mesh: {report}", path.display());
    }
    Ok(mesh)
}

fn load_body(args: &BodyArgs) -> Result<SkinnedModel> {
    let config = match &args.body_config {
        Some(path) => read_json(path)?,
        None => BodyConfig::default(),
    };
    Ok(build_toy_body(&config)?)
}

/// Resolves `elbow` to `l_elbow` when the bare name is not a joint.
fn joint_name(model: &SkinnedModel, name: &str) -> String {
    if model.joint_index(name).is_none() && model.joint_index(&format!("l_{name}")).is_some() {
        format!("l_{name}")
    } else {
        name.to_string()
    }
}

fn parse_pose(model: &SkinnedModel, entries: &[String]) -> Result<PoseParams> {
    let mut pose = model.zero_pose();
    for entry in entries {
        let Some((name, deg)) = entry.split_once(':') else {
            bail!("pose entries look like joint:degrees, got {entry:?}");
        };
        let deg: f64 = deg.trim().parse().with_context(|| format!("bad angle in {entry:?}"))?;
        model.bend(&mut pose, &joint_name(model, name.trim()), deg)?;
    }
    pose.clamp_rotations(model.joint_limit);
    Ok(pose)
}

fn gen(kind: GenKind) -> Result<ExitCode> {
    let (mesh, path) = match kind {
        GenKind::Sphere { radius, subdiv, out } => (
            generate(&MeshKind::Sphere {
                radius,
                subdivisions: subdiv,
            })?,
            out.path,
        ),
        GenKind::Box { extents, out } => {
            let [x, y, z] = extents[..] else {
                bail!("--extents takes three values, got {}", extents.len());
            };
            (generate(&MeshKind::Box { extents: [x, y, z] })?, out.path)
        }
        GenKind::Capsule {
            radius,
            length,
            segments,
            out,
        } => (
            generate(&MeshKind::Capsule {
                radius,
                length,
                segments,
            })?,
            out.path,
        ),
        GenKind::BentTube {
            radius,
            arc,
            segments,
            out,
        } => (
            generate(&MeshKind::BentTube(BentTube {
                radius,
                arc_angle_deg: arc,
                segments,
            }))?,
            out.path,
        ),
        GenKind::TwoSpheres { gap, subdiv, out } => (two_spheres_gap(subdiv, gap)?, out.path),
        GenKind::MixedArea { out } => (mixed_area_pair()?, out.path),
        GenKind::ToyBody { pose, body, out } => {
            let model = load_body(&body)?;
            let pose = parse_pose(&model, &pose)?;
            (model.pose_mesh(&pose, &model.unit_shape())?, out.path)
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_obj(&mesh, &path)?;
    eprintln!(
        "wrote {} ({} vertices, {} faces)",
        path.display(),
        mesh.num_vertices(),
        mesh.num_faces()
    );
    Ok(ExitCode::SUCCESS)
}

fn validate(path: &Path) -> Result<ExitCode> {
    let mesh = load_obj(path).with_context(|| format!("loading {}", path.display()))?;
    let report = mesh.validate();
    let valid = report.is_valid();
    let out = json!({
        "schema": TRACE_SCHEMA,
        "mesh": path,
        "vertices": mesh.num_vertices(),
        "faces": mesh.num_faces(),
        "valid": valid,
        "report": report,
    });
    emit(&(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(if valid { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn detect(path: &Path, view: &ViewArgs, labels: bool, out: Option<&Path>) -> Result<ExitCode> {
    let mesh = load_valid(path)?;
    let c = classify(&mesh, view.rays, view.axis)?;
    let report = c.report(view.rays, view.axis, labels);
    let mut value = serde_json::to_value(&report)?;
    value["schema"] = json!(TRACE_SCHEMA);
    value["mesh"] = json!(path);
    let text = serde_json::to_string_pretty(&value)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("detect.json"), &text)?;
    }
    emit(&(text + "\n"))?;
    Ok(if c.num_intersecting() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn remove(path: &Path, cfg: OptimConfig, out: &Path) -> Result<ExitCode> {
    let mesh = load_valid(path)?;
    create_dir(out)?;
    let (_, trace) = remove_vertex_space(&mesh, &cfg)?;
    trace.save(out.join("trace.json"))?;
    let last = trace.final_record();
    let summary = json!({
        "schema": TRACE_SCHEMA,
        "mesh": path,
        "iterations": last.iter,
        "initial_spt": trace.iterations[0].spt,
        "final_spt": last.spt,
        "termination": trace.termination,
        "snapshots": trace.snapshots,
        "config": cfg,
    });
    emit(&(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn scenario(kind: ScenarioKind, sigma: f64, seed: u64, body: &BodyArgs, out: &Path) -> Result<ExitCode> {
    let model = load_body(body)?;
    let FitScenario { init, truth, targets } = match kind {
        ScenarioKind::Crafted => hand_in_torso(&model)?,
        ScenarioKind::Recovery => noisy_recovery(&model, sigma, seed)?,
    };
    create_dir(out)?;
    targets.save(out.join("targets.json"))?;
    write_json(&out.join("init.json"), &init)?;
    write_json(&out.join("truth.json"), &truth)?;
    eprintln!("wrote targets.json, init.json and truth.json to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn fit(
    targets: &Path,
    init: Option<&Path>,
    use_spt: bool,
    cfg: OptimConfig,
    body: &BodyArgs,
    out: &Path,
) -> Result<ExitCode> {
    let model = load_body(body)?;
    let targets = Targets::load(targets).with_context(|| format!("loading {}", targets.display()))?;
    let init: PoseParams = match init {
        Some(path) => read_json(path)?,
        None => model.zero_pose(),
    };
    let shape = model.unit_shape();
    create_dir(out)?;
    let (pose, trace) = fit_pose_2d(&model, &shape, &targets, &init, &cfg, use_spt)?;
    trace.save(out.join("trace.json"))?;
    write_json(&out.join("pose.json"), &pose)?;
    let mesh = model.pose_mesh(&pose, &shape)?;
    save_obj(&mesh, out.join("final.obj"))?;
    let last = trace.final_record();
    let summary = json!({
        "schema": TRACE_SCHEMA,
        "use_spt": use_spt,
        "iterations": last.iter,
        "termination": trace.termination,
        "e_j": last.e_j,
        "mean_joint_error_px": mean_joint_error(&model, &pose, &shape, &targets)?,
        "final_spt": last.spt,
        "intersecting": last.spt > 0.0,
        "config": cfg,
    });
    write_json(&out.join("fit.json"), &summary)?;
    emit(&(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn bench_csv(table: &BenchTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# schema={} warmup={} reps={} threads={} reference_ms={} (512x512, 1 body, published hardware)",
        table.schema, table.warmup, table.reps, table.threads, table.reference_ms
    );
    if let Some(r) = table.ray_ratio {
        let _ = writeln!(s, "# ray_ratio={r}");
    }
    if let Some(fit) = &table.body_fit {
        let _ = writeln!(
            s,
            "# per_body slope_ms={} intercept_ms={} r2={}",
            fit.per_body.slope, fit.per_body.intercept, fit.per_body.r_squared
        );
        let _ = writeln!(
            s,
            "# per_triangle slope_ms={} intercept_ms={} r2={}",
            fit.per_triangle.slope, fit.per_triangle.intercept, fit.per_triangle.r_squared
        );
    }
    s.push_str("rays,bodies,triangles,median_ms,min_ms,max_ms,reps\n");
    for c in &table.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.rays, c.bodies, c.triangles, c.median_ms, c.min_ms, c.max_ms, c.reps
        );
    }
    s
}
