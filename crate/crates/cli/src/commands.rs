use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kreinmap_core::dirac_verify::{
    self, check_verR, roundtrip_report, solve_cauchy, verify_Y_representation, verify_appendix,
    DEFAULT_LAMBDAS,
};
use kreinmap_core::factorization::{is_accelerant, solve_glm};
use kreinmap_core::forward_map::{build_F_h, build_L_h, theta};
use kreinmap_core::inverse_map::{build_K, upsilon_with};
use kreinmap_core::{Accelerant, DiagnosticReport, Potential, SpectralParameter};
use serde::Serialize;

use crate::exit::CliError;
use crate::fieldfile::{load, Field, FieldFile};

/// L_h and the GLM solution for F^h agree far below this.
const GLM_CONSISTENCY_TOL: f64 = 1e-8;
const RK4_SUBSTEPS: usize = 4;

#[derive(Serialize)]
struct Envelope<'a> {
    command: &'a str,
    input: String,
    seed: Option<u64>,
    #[serde(flatten)]
    extra: serde_json::Value,
    report: &'a DiagnosticReport,
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| CliError::Output(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Output(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn expect_accelerant(f: Field) -> Result<Accelerant, CliError> {
    match f {
        Field::Accelerant(h) => Ok(h),
        _ => Err(CliError::Input("expected an accelerant file".into())),
    }
}

fn expect_potential(f: Field) -> Result<Potential, CliError> {
    match f {
        Field::Potential(q) => Ok(q),
        _ => Err(CliError::Input("expected a potential file".into())),
    }
}

pub fn parse_lambdas(raw: &[String]) -> Result<Vec<SpectralParameter>, CliError> {
    raw.iter()
        .map(|s| s.parse::<SpectralParameter>().map_err(|e| CliError::Input(e.to_string())))
        .collect()
}

/// Runs the accelerant test and turns a rejection into exit code 2.
fn require_accelerant(h: &Accelerant, tol: f64) -> Result<kreinmap_core::factorization::AccelerantReport, CliError> {
    let rep = is_accelerant(h, tol);
    if !rep.accepted {
        let alpha = rep.crossing_alpha.unwrap_or(rep.worst_alpha);
        return Err(CliError::Rejected(format!(
            "not an accelerant: I + H_alpha is singular near critical alpha = {alpha:.4} (sigma_min = {:.3e})",
            rep.min_singular_value
        )));
    }
    Ok(rep)
}

pub fn theta_cmd(input: &Path, out: &Path, n: Option<usize>, tol: f64) -> Result<(), CliError> {
    let h = expect_accelerant(load(input, n)?)?;
    let rep = require_accelerant(&h, tol)?;
    let q = theta(&h)?;
    println!(
        "accelerant margin: sigma_min = {:.6e} at alpha = {:.4}",
        rep.min_singular_value, rep.worst_alpha
    );
    FieldFile::from_potential(&q, format!("theta of {}", input.display())).write(out)
}

pub fn upsilon_cmd(input: &Path, out: &Path, n: Option<usize>, tol: f64) -> Result<(), CliError> {
    let q = expect_potential(load(input, n)?)?;
    let (h, rep) = upsilon_with(&q, tol, kreinmap_core::inverse_map::PICARD_MAX_ITER)?;
    for e in &rep.entries {
        println!("{} = {:.6e}", e.name, e.value);
    }
    FieldFile::from_accelerant(&h, format!("upsilon of {}", input.display())).write(out)
}

/// Exit status 0 when accepted, 2 when rejected.
pub fn check_accelerant_cmd(input: &Path, n: Option<usize>, tol: f64, csv: bool) -> Result<i32, CliError> {
    let h = expect_accelerant(load(input, n)?)?;
    let rep = is_accelerant(&h, tol);
    let summary = format!(
        "{}: min sigma_min = {:.6e} at alpha = {:.4}{}",
        if rep.accepted { "accepted" } else { "rejected" },
        rep.min_singular_value,
        rep.worst_alpha,
        rep.crossing_alpha
            .map(|a| format!(", determinant crosses zero near alpha = {a:.4}"))
            .unwrap_or_default()
    );
    if csv {
        let mut s = String::from("alpha,sigma_min,sigma_max\n");
        for m in &rep.margins {
            let _ = writeln!(s, "{},{},{}", m.alpha, m.sigma_min, m.sigma_max);
        }
        print!("{s}");
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    Ok(if rep.accepted { crate::exit::OK } else { crate::exit::REJECTED })
}

fn default_ladder(n: usize) -> Vec<usize> {
    if n.is_multiple_of(8) && n / 4 >= 8 {
        vec![n / 4, n / 2, n]
    } else {
        vec![n]
    }
}

pub fn roundtrip_cmd(
    input: &Path,
    n: Option<usize>,
    ladder: Option<Vec<usize>>,
    tol: f64,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let field = match load(input, n)? {
        Field::Accelerant(h) => {
            require_accelerant(&h, 1e-8)?;
            dirac_verify::Field::Accelerant(h)
        }
        Field::Potential(q) => dirac_verify::Field::Potential(q),
        Field::Kernel(_) => return Err(CliError::Input("roundtrip needs an accelerant or potential".into())),
    };
    let ladder = ladder.unwrap_or_else(|| default_ladder(field.grid().cells()));
    let rep = roundtrip_report(&field, &ladder, tol)?;
    emit_json(
        out,
        &Envelope {
            command: "roundtrip",
            input: input.display().to_string(),
            seed,
            extra: serde_json::json!({ "ladder": ladder, "tol": tol }),
            report: &rep,
        },
    )?;
    if rep.all_pass() {
        Ok(crate::exit::OK)
    } else {
        report_failures(&rep);
        Ok(crate::exit::REJECTED)
    }
}

fn report_failures(rep: &DiagnosticReport) {
    for e in rep.failures() {
        match e.tolerance {
            Some(t) => eprintln!("FAILED {}: {:.3e} > {:.1e}", e.name, e.value, t),
            None => eprintln!("FAILED {}: {}", e.name, e.value),
        }
    }
}

fn potential_checks(q: &Potential, lambdas: &[SpectralParameter]) -> Result<DiagnosticReport, CliError> {
    let mut rep = verify_appendix(q)?;
    let y = verify_Y_representation(q, lambdas)?;
    rep.runtime_s += y.runtime_s;
    rep.extend("", y);
    Ok(rep)
}

pub fn verify_cmd(
    input: &Path,
    n: Option<usize>,
    lambdas: &[String],
    out: Option<&Path>,
    kernel_out: Option<&Path>,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let lambdas = if lambdas.is_empty() {
        DEFAULT_LAMBDAS.iter().map(|z| SpectralParameter::new(*z)).collect::<Result<Vec<_>, _>>()?
    } else {
        parse_lambdas(lambdas)?
    };
    let write_kernel = |q: &Potential| -> Result<(), CliError> {
        match kernel_out {
            Some(p) => FieldFile::from_kernel(&build_K(q)?, format!("K_Q of {}", input.display())).write(p),
            None => Ok(()),
        }
    };
    let rep = match load(input, n)? {
        Field::Potential(q) => {
            write_kernel(&q)?;
            potential_checks(&q, &lambdas)?
        }
        Field::Accelerant(h) => {
            require_accelerant(&h, 1e-8)?;
            let mut rep = check_verR(&h)?;
            let glm = solve_glm(&build_F_h(&h))?.sub(&build_L_h(&h)?)?.max_abs();
            rep.check("GLM_L_h", glm, GLM_CONSISTENCY_TOL);
            let q = theta(&h)?;
            write_kernel(&q)?;
            let qrep = potential_checks(&q, &lambdas)?;
            rep.runtime_s += qrep.runtime_s;
            rep.extend("Q.", qrep);
            rep
        }
        Field::Kernel(_) => return Err(CliError::Input("verify needs an accelerant or potential".into())),
    };
    emit_json(
        out,
        &Envelope {
            command: "verify",
            input: input.display().to_string(),
            seed,
            extra: serde_json::json!({}),
            report: &rep,
        },
    )?;
    if rep.all_pass() {
        Ok(crate::exit::OK)
    } else {
        report_failures(&rep);
        Ok(crate::exit::REJECTED)
    }
}

/// One CSV section per λ: a `# lambda = ...` line, a header, then one row
/// per node with every entry of Y(x_i, λ) as re/im columns.
pub fn solve_dirac_cmd(
    input: &Path,
    n: Option<usize>,
    lambdas: &[String],
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let lambdas = parse_lambdas(lambdas)?;
    if lambdas.is_empty() {
        return Err(CliError::Input("solve-dirac needs at least one --lambda".into()));
    }
    let q = expect_potential(load(input, n)?)?;
    let m = 2 * q.r();
    let g = q.grid();
    let mut s = String::new();
    for (k, lam) in lambdas.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        let _ = writeln!(s, "# lambda = {lam}");
        s.push_str("i,x");
        for a in 0..m {
            for b in 0..m {
                let _ = write!(s, ",y{a}{b}_re,y{a}{b}_im");
            }
        }
        s.push('\n');
        for (i, y) in solve_cauchy(&q, *lam, RK4_SUBSTEPS).iter().enumerate() {
            let _ = write!(s, "{i},{}", g.x(i));
            for z in y {
                let _ = write!(s, ",{},{}", z.re, z.im);
            }
            s.push('\n');
        }
    }
    emit_text(out.as_deref(), &s)
}
