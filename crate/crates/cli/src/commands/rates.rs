//! Convergence-rate suites: the tensor-product matrix on cube meshes, the
//! consistency-loss demonstration and the spherical-shell studies.

use terra_core::converge::{predicted_rate, run_rate_study, run_shell_helmholtz, run_shell_l2, RateStudy, Target, Verdict};
use terra_core::element::{build_reference_element, Family, PolyFamily};
use terra_core::mesh::MapClass;
use terra_core::reference::CellShape;

use super::Ctx;
use crate::config::{Settings, Suite};
use crate::error::{CliError, Result};
use crate::output::{num, verdict, Report};

/// Required drop below the affine rate for the loss demonstration.
pub const LOSS_MARGIN: f64 = 0.7;

pub const CLASSES: [MapClass; 3] = [MapClass::Affine, MapClass::Multilinear, MapClass::MultilinearInvariantOnBase];

fn family_name(f: Family) -> &'static str {
    match f {
        Family::EMinus => "Eminus",
        _ => "E",
    }
}

/// Every supported (family, r, s, k, class) combination with r, s ≤
/// `max_degree`. Returns the studies and the number of unsupported
/// combinations skipped.
pub fn table1_matrix(s: &Settings) -> Result<(Vec<RateStudy>, usize)> {
    let mut studies = Vec::new();
    let mut skipped = 0;
    for fam in [Family::EMinus, Family::E] {
        for r in 1..=s.max_degree {
            for sd in 1..=s.max_degree {
                for &k in &s.forms {
                    let pf = PolyFamily::tensor(fam, r, sd, k);
                    if build_reference_element(pf, CellShape::Prism).is_err() {
                        skipped += CLASSES.len();
                        continue;
                    }
                    for class in CLASSES {
                        studies.push(run_rate_study(pf, class, &s.levels, &Target::cube_default(k), s.seed)?);
                    }
                }
            }
        }
    }
    Ok((studies, skipped))
}

/// The loss demonstration: measured slope on random multilinear meshes and
/// the affine prediction it falls short of.
pub struct LossDemo {
    pub study: RateStudy,
    pub affine: i64,
}

impl LossDemo {
    pub fn loss(&self) -> f64 {
        self.affine as f64 - self.study.slope
    }

    pub fn pass(&self) -> bool {
        self.loss() >= LOSS_MARGIN
    }
}

pub fn loss_demo(s: &Settings) -> Result<LossDemo> {
    let pf = PolyFamily::parse(&s.loss_family)?;
    if !matches!(pf.family, Family::E | Family::EMinus) {
        return Err(CliError::setting("loss_family", "must be a tensor-product family E(r,s,k) or Eminus(r,s,k)"));
    }
    let study = run_rate_study(pf, MapClass::Multilinear, &s.loss_levels, &Target::cube_default(pf.k), s.seed)?;
    Ok(LossDemo { study, affine: predicted_rate(pf, MapClass::Affine)? })
}

/// Shell L2 projections of E⁻(1,1) for k = 0, 3 and the mixed Helmholtz
/// problem for E⁻(2,2) (σ in k = 2, u in k = 3).
pub fn shell_studies(s: &Settings) -> Result<Vec<RateStudy>> {
    let mut out = Vec::new();
    for k in [0, 3] {
        let pf = PolyFamily::tensor(Family::EMinus, 1, 1, k);
        out.push(run_shell_l2(pf, &s.shell_levels, &Target::shell_default(k))?);
    }
    let (sigma, u) = run_shell_helmholtz(&s.helmholtz_levels, 2, 2)?;
    out.push(sigma);
    out.push(u);
    Ok(out)
}

fn study_row(st: &RateStudy) -> Vec<String> {
    let f = st.family;
    vec![
        family_name(f.family).to_string(),
        f.r.to_string(),
        f.s.to_string(),
        f.k.to_string(),
        st.map_class.to_string(),
        st.predicted.to_string(),
        format!("{:.4}", st.slope),
        st.verdict().to_string(),
    ]
}

const RATE_HEADER: [&str; 8] = ["family", "r", "s", "k", "map_class", "predicted", "measured", "verdict"];

pub fn rates(ctx: &Ctx) -> Result<Report> {
    let mut rep = Report::default();
    match ctx.s.suite {
        Suite::Table1 => {
            let (studies, skipped) = table1_matrix(&ctx.s)?;
            let rows: Vec<_> = studies.iter().map(study_row).collect();
            let path = ctx.out.main("table1.csv");
            ctx.out.write_csv(&mut rep, path, &RATE_HEADER, &rows)?;
            for st in &studies {
                rep.check(st.label.clone(), st.verdict() == Verdict::Pass);
            }
            rep.line("studies", studies.len());
            rep.line("skipped", skipped);
            rep.line("passed", studies.iter().filter(|s| s.verdict() == Verdict::Pass).count());
            let demo = loss_demo(&ctx.s)?;
            let f = demo.study.family;
            let row = vec![
                family_name(f.family).to_string(),
                f.r.to_string(),
                f.s.to_string(),
                f.k.to_string(),
                demo.study.map_class.to_string(),
                demo.affine.to_string(),
                format!("{:.4}", demo.study.slope),
                format!("{:.4}", demo.loss()),
                verdict(demo.pass()).to_string(),
            ];
            let path = ctx.out.extra("table1_loss.csv", "loss");
            ctx.out.write_csv(
                &mut rep,
                path,
                &["family", "r", "s", "k", "map_class", "affine_predicted", "measured", "loss", "verdict"],
                &[row],
            )?;
            rep.line("loss", format!("{:.4}", demo.loss()));
            rep.check("consistency loss demonstrated", demo.pass());
        }
        Suite::Shell => {
            let studies = shell_studies(&ctx.s)?;
            let rows: Vec<_> = studies.iter().map(study_row).collect();
            let path = ctx.out.main("shell_rates.csv");
            ctx.out.write_csv(&mut rep, path, &RATE_HEADER, &rows)?;
            for st in &studies {
                rep.line(format!("slope {}", st.label).replace(' ', "_"), format!("{:.4}", st.slope));
                rep.check(st.label.clone(), st.verdict() == Verdict::Pass);
            }
        }
    }
    Ok(rep)
}

pub fn shell(ctx: &Ctx) -> Result<Report> {
    let studies = shell_studies(&ctx.s)?;
    let mut rep = Report::default();
    let mut rows = Vec::new();
    for st in &studies {
        for i in 0..st.levels.len() {
            rows.push(vec![
                st.label.clone(),
                st.family.name(),
                st.family.k.to_string(),
                st.levels[i].to_string(),
                num(st.h[i]),
                num(st.errors[i]),
                num(st.diagnostics[i]),
            ]);
        }
        rep.line(format!("slope {}", st.label).replace(' ', "_"), format!("{:.4}", st.slope));
        rep.check(st.label.clone(), st.verdict() == Verdict::Pass);
    }
    let path = ctx.out.main("shell.csv");
    ctx.out.write_csv(&mut rep, path, &["study", "family", "k", "level", "h", "error", "gh_deviation"], &rows)?;
    Ok(rep)
}
