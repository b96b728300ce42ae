/// Band-limited resampler: Kaiser-windowed sinc evaluated through a
/// polyphase table for the reduced rate ratio `up / down`.
///
/// Output sample `n` sits at input position `n * down / up`; samples
/// outside the input are zero.
#[derive(Clone, Debug)]
pub struct SincResampler {
    from_hz: u32,
    to_hz: u32,
    up: usize,
    down: usize,
    cutoff: f64,
    half_width: f64,
    beta: f64,
    radius: usize,
    /// `up` rows of `2 * radius + 1` taps, or empty when computed on the fly.
    table: Vec<f64>,
}

/// Zero crossings of the sinc on each side of the center.
pub const ZERO_CROSSINGS: usize = 32;
/// Passband edge as a fraction of the lower Nyquist frequency.
pub const ROLLOFF: f64 = 0.95;
pub const KAISER_BETA: f64 = 8.6;

const MAX_TABLE_PHASES: usize = 4096;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

impl SincResampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        assert!(from_hz > 0 && to_hz > 0, "sample rates must be positive");
        let g = gcd(from_hz as usize, to_hz as usize);
        let up = to_hz as usize / g;
        let down = from_hz as usize / g;
        let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half_width = ZERO_CROSSINGS as f64 / (2.0 * cutoff);
        let radius = half_width.ceil() as usize + 1;
        let mut r = Self {
            from_hz,
            to_hz,
            up,
            down,
            cutoff,
            half_width,
            beta: KAISER_BETA,
            radius,
            table: Vec::new(),
        };
        if up != down && up <= MAX_TABLE_PHASES {
            let width = 2 * radius + 1;
            let mut table = vec![0.0; up * width];
            for phase in 0..up {
                for j in 0..width {
                    table[phase * width + j] = r.tap(phase, j);
                }
            }
            r.table = table;
        }
        r
    }

    pub fn from_hz(&self) -> u32 {
        self.from_hz
    }

    pub fn to_hz(&self) -> u32 {
        self.to_hz
    }

    /// Impulse response at offset `tau` input samples.
    pub fn kernel(&self, tau: f64) -> f64 {
        if tau.abs() >= self.half_width {
            return 0.0;
        }
        let x = 2.0 * self.cutoff * tau;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let r = tau / self.half_width;
        let window = bessel_i0(self.beta * (1.0 - r * r).sqrt()) / bessel_i0(self.beta);
        2.0 * self.cutoff * sinc * window
    }

    fn tap(&self, phase: usize, j: usize) -> f64 {
        let offset = j as f64 - self.radius as f64;
        self.kernel(phase as f64 / self.up as f64 - offset)
    }

    /// Number of output samples for `n` input samples (rounded up).
    pub fn output_len(&self, n: usize) -> usize {
        (n * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.up == self.down {
            return input.to_vec();
        }
        let width = 2 * self.radius + 1;
        let len = input.len() as isize;
        let mut scratch = vec![0.0; width];
        (0..self.output_len(input.len()))
            .map(|n| {
                let num = n * self.down;
                let base = (num / self.up) as isize;
                let phase = num % self.up;
                let taps: &[f64] = if self.table.is_empty() {
                    for (j, s) in scratch.iter_mut().enumerate() {
                        *s = self.tap(phase, j);
                    }
                    &scratch
                } else {
                    &self.table[phase * width..(phase + 1) * width]
                };
                let first = base - self.radius as isize;
                let mut acc = 0.0f64;
                for (j, &c) in taps.iter().enumerate() {
                    let k = first + j as isize;
                    if k >= 0 && k < len {
                        acc += c * input[k as usize] as f64;
                    }
                }
                acc as f32
            })
            .collect()
    }
}
