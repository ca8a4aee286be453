//! Mesh summary.

use super::Ctx;
use crate::error::Result;
use crate::output::{num, Report};

pub fn mesh_info(ctx: &Ctx) -> Result<Report> {
    let m = ctx.spec.build()?;
    let mut rep = Report::default();
    rep.line("shape", m.shape);
    rep.line("tdim", m.tdim());
    rep.line("gdim", m.gdim);
    rep.line("cells", m.num_cells());
    rep.line("vertices", m.num_vertices());
    rep.line("facets", m.facets.len());
    rep.line("interior_facets", m.facets.iter().filter(|f| f.is_interior()).count());
    rep.line("map_class", m.map_class);
    rep.line("periodic", m.periodic.is_some());
    rep.line("layers", m.layers().map_or("none".to_string(), |l| l.to_string()));
    rep.line("volume", num(m.total_volume()));
    rep.line("max_diameter", num(m.max_diameter()));
    Ok(rep)
}
