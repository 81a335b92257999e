/// Classical fixed-step fourth-order Runge-Kutta.
///
/// `rhs(t, y, dydt)` writes the derivative into `dydt`. The workspace keeps
/// stepping allocation-free.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn step<F>(&mut self, t: f64, h: f64, y: &mut [f64], mut rhs: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        debug_assert_eq!(y.len(), self.k1.len());
        let axpy = |tmp: &mut [f64], y: &[f64], a: f64, k: &[f64]| {
            for ((t, y), k) in tmp.iter_mut().zip(y).zip(k) {
                *t = y + a * k;
            }
        };
        rhs(t, y, &mut self.k1);
        axpy(&mut self.tmp, y, 0.5 * h, &self.k1);
        rhs(t + 0.5 * h, &self.tmp, &mut self.k2);
        axpy(&mut self.tmp, y, 0.5 * h, &self.k2);
        rhs(t + 0.5 * h, &self.tmp, &mut self.k3);
        axpy(&mut self.tmp, y, h, &self.k3);
        rhs(t + h, &self.tmp, &mut self.k4);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}
