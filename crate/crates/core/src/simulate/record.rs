use std::io::{self, Write};

use serde::Serialize;

use crate::dynamics::{kinetic_energy, mechanical_energy, GenInput, State, SystemParams};

pub const CSV_HEADER: &str = "t,theta,r,dtheta,dr,tau,f,E";
pub const PID_CSV_HEADER: &str = "t,theta,r,dtheta,dr,tau,f,E,tau_cmd_preclip,f_cmd_preclip,e_theta,e_r";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub theta: f64,
    pub r: f64,
    pub dtheta: f64,
    pub dr: f64,
    pub tau: f64,
    pub f: f64,
    pub energy: f64,
}

impl Sample {
    pub fn state(&self) -> State {
        State::new(self.theta, self.r, self.dtheta, self.dr)
    }

    pub fn input(&self) -> GenInput {
        GenInput::new(self.tau, self.f)
    }
}

/// Controller internals aligned with the rows of a record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ControllerSample {
    pub tau_cmd_preclip: f64,
    pub f_cmd_preclip: f64,
    pub e_theta: f64,
    pub e_r: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    /// Present for feedback runs; one entry per sample.
    pub controller: Option<Vec<ControllerSample>>,
    pub terminal: State,
    pub terminal_energy: f64,
    /// Time at which the run was aborted, if it was.
    pub aborted_at: Option<f64>,
}

impl TrajectoryRecord {
    pub(crate) fn push(&mut self, p: &SystemParams, t: f64, x: State, u: GenInput) {
        self.samples.push(Sample {
            t,
            theta: x.theta,
            r: x.r,
            dtheta: x.dtheta,
            dr: x.dr,
            tau: u.tau,
            f: u.f,
            energy: mechanical_energy(p, &x),
        });
    }

    pub(crate) fn finish(&mut self, p: &SystemParams, x: State) {
        self.terminal = x;
        self.terminal_energy = mechanical_energy(p, &x);
    }

    pub fn residual_kinetic(&self, p: &SystemParams) -> f64 {
        kinetic_energy(p, &self.terminal)
    }

    /// Peak `(|τ|, |f|)` over the applied inputs.
    pub fn peak_inputs(&self) -> (f64, f64) {
        self.samples.iter().fold((0.0f64, 0.0f64), |(a, b), s| {
            (a.max(s.tau.abs()), b.max(s.f.abs()))
        })
    }

    /// Writes `t,theta,r,dtheta,dr,tau,f,E` rows (plus controller columns when present).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let extended = self
            .controller
            .as_ref()
            .filter(|c| c.len() == self.samples.len());
        writeln!(w, "{}", if extended.is_some() { PID_CSV_HEADER } else { CSV_HEADER })?;
        for (i, s) in self.samples.iter().enumerate() {
            let cols = [s.t, s.theta, s.r, s.dtheta, s.dr, s.tau, s.f, s.energy];
            let mut line = cols.iter().map(|v| format_sig(*v)).collect::<Vec<_>>().join(",");
            if let Some(c) = extended {
                let c = &c[i];
                for v in [c.tau_cmd_preclip, c.f_cmd_preclip, c.e_theta, c.e_r] {
                    line.push(',');
                    line.push_str(&format_sig(v));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Decimal text with 15 significant digits; scientific notation for very small or large magnitudes.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000000000".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..15).contains(&mag) {
        let decimals = (14 - mag).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.14e}")
    }
}
