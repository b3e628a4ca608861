//! Plain-text export of an assembled problem for cross-checking with other
//! solvers.
//!
//! ```text
//! %%lmi-problem coordinate real symmetric
//! % variable <name> <kind> <rows> <cols> <first coordinate>
//! <coordinates> <constraints>
//! objective <coordinate> <value>
//! constraint <index> <name with spaces replaced> <dim> <margin>
//! <constraint> <coordinate> <row> <col> <value>
//! ```
//!
//! Indices are 1-based; coordinate 0 is the constant part. Only the upper
//! triangle is listed. The constraint reads `F0 + sum x_c F_c <= -margin I`.

use std::fmt::Write as _;

use super::problem::{LmiProblem, VarKind};

pub fn dump(problem: &LmiProblem) -> String {
    let mut s = String::from("%%lmi-problem coordinate real symmetric\n");
    for v in &problem.vars {
        let kind = match v.kind {
            VarKind::Scalar => "scalar",
            VarKind::Full { .. } => "full",
            VarKind::Symmetric { .. } => "symmetric",
        };
        let (r, c) = v.shape();
        let _ = writeln!(s, "% variable {} {kind} {r} {c} {}", v.name, v.offset + 1);
    }
    let _ = writeln!(s, "{} {}", problem.n_coords, problem.constraints.len());
    for (c, v) in problem.objective.iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(s, "objective {} {v:e}", c + 1);
        }
    }
    for (j, lmi) in problem.constraints.iter().enumerate() {
        let _ = writeln!(s, "constraint {} {} {} {:e}", j + 1, lmi.name.replace(' ', "_"), lmi.dim, lmi.margin);
        for r in 0..lmi.dim {
            for c in r..lmi.dim {
                let v = lmi.f0[(r, c)];
                if v != 0.0 {
                    let _ = writeln!(s, "{} 0 {} {} {v:e}", j + 1, r + 1, c + 1);
                }
            }
        }
        for t in &lmi.terms {
            for &(r, c, v) in &t.entries {
                let _ = writeln!(s, "{} {} {} {} {v:e}", j + 1, t.coord + 1, r + 1, c + 1);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::lmi::LmiBuilder;

    #[test]
    fn small_problem_layout() {
        let mut pr = LmiProblem::new();
        let t = pr.scalar("t");
        pr.minimize_trace(t, 1.0);
        let mut b = LmiBuilder::new("two by two", &[2]);
        b.scalar(0, 0, t, -DMatrix::identity(2, 2))
            .constant(0, 0, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .margin(0.0);
        pr.add_lmi(&b).unwrap();
        let text = dump(&pr);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            [
                "%%lmi-problem coordinate real symmetric",
                "% variable t scalar 1 1 1",
                "1 1",
                "objective 1 1e0",
                "constraint 1 two_by_two 2 0e0",
                "1 0 1 2 1e0",
                "1 1 1 1 -1e0",
                "1 1 2 2 -1e0",
            ]
        );
    }
}
