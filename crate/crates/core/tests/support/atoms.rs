//! A piecewise function kept as an unsimplified union of quadratic atoms,
//! each alive on a closed interval: f(m) = min over atoms containing m.
//! Every operation is a direct transcription of its definition.

#[derive(Debug, Clone, Copy)]
pub struct Atom {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Atom {
    fn eval(&self, m: f64) -> f64 {
        self.a * m * m + self.b * m + self.c
    }

    /// Minimizer of the atom on its interval.
    fn argmin(&self) -> f64 {
        if self.a > 0.0 {
            (-self.b / (2.0 * self.a)).clamp(self.lo, self.hi)
        } else if self.b < 0.0 {
            self.hi
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone)]
pub struct Atoms {
    pub lo: f64,
    pub hi: f64,
    pub atoms: Vec<Atom>,
}

impl Atoms {
    pub fn quadratic(lo: f64, hi: f64, a: f64, b: f64, c: f64) -> Self {
        Self { lo, hi, atoms: vec![Atom { lo, hi, a, b, c }] }
    }

    pub fn eval(&self, m: f64) -> f64 {
        self.atoms.iter().filter(|t| t.lo <= m && m <= t.hi).map(|t| t.eval(m)).fold(f64::INFINITY, f64::min)
    }

    pub fn add_quadratic(&self, a: f64, b: f64, c: f64) -> Self {
        let atoms = self.atoms.iter().map(|t| Atom { a: t.a + a, b: t.b + b, c: t.c + c, ..*t }).collect();
        Self { atoms, ..*self }
    }

    pub fn add_point_loss(&self, y: f64) -> Self {
        self.add_quadratic(1.0, -2.0 * y, y * y)
    }

    pub fn add_constant(&self, k: f64) -> Self {
        self.add_quadratic(0.0, 0.0, k)
    }

    pub fn min(&self, other: &Self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Self { atoms, ..*self }
    }

    /// `m ↦ min { f(m') : m' ≤ m − gap }`.
    pub fn leq_envelope(&self, gap: f64) -> Self {
        let mut atoms = Vec::new();
        for t in &self.atoms {
            let v = t.argmin();
            // decreasing branch, shifted right by gap: m' = m − gap
            if t.lo + gap <= self.hi {
                let (a, b, c) = (t.a, t.b - 2.0 * t.a * gap, t.a * gap * gap - t.b * gap + t.c);
                atoms.push(Atom { lo: t.lo + gap, hi: (v + gap).min(self.hi), a, b, c });
            }
            // flat tail once the minimizer is reachable
            if v + gap <= self.hi {
                atoms.push(Atom { lo: v + gap, hi: self.hi, a: 0.0, b: 0.0, c: t.eval(v) });
            }
        }
        Self { atoms, ..*self }
    }

    /// `m ↦ min { f(m') : m' ≥ m + gap }`.
    pub fn geq_envelope(&self, gap: f64) -> Self {
        self.reflect().leq_envelope(gap).reflect()
    }

    fn reflect(&self) -> Self {
        let atoms = self.atoms.iter().map(|t| Atom { lo: -t.hi, hi: -t.lo, a: t.a, b: -t.b, c: t.c }).collect();
        Self { lo: -self.hi, hi: -self.lo, atoms }
    }
}
