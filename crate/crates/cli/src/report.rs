use std::fmt::Write;

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub noisy_psnr: f64,
    pub denoised_psnr: f64,
    /// Filtering wall time, excluding decode and encode.
    pub seconds: f64,
    pub megapixels: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const CSV_HEADER: &str = "name,noisy_psnr,denoised_psnr,seconds,megapixels";
pub const AGGREGATE_NAME: &str = "aggregate";

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn mean_noisy_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.noisy_psnr))
    }

    pub fn mean_denoised_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.denoised_psnr))
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }

    pub fn total_megapixels(&self) -> f64 {
        self.rows.iter().map(|r| r.megapixels).sum()
    }

    /// Total megapixels over total filtering seconds.
    pub fn throughput(&self) -> f64 {
        self.total_megapixels() / self.total_seconds()
    }

    /// Per-image rows, then an `aggregate` row holding the mean PSNRs and
    /// the summed seconds and megapixels. Floats use shortest round-trip
    /// formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.name, r.noisy_psnr, r.denoised_psnr, r.seconds, r.megapixels
            )
            .unwrap();
        }
        writeln!(
            s,
            "{AGGREGATE_NAME},{},{},{},{}",
            self.mean_noisy_psnr(),
            self.mean_denoised_psnr(),
            self.total_seconds(),
            self.total_megapixels()
        )
        .unwrap();
        s
    }

    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max(AGGREGATE_NAME.len());
        let mut s = String::new();
        writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>7}  {:>8}  {:>7}",
            "image", "noisy dB", "out dB", "gain", "seconds", "MP"
        )
        .unwrap();
        let line = |s: &mut String, name: &str, n: f64, d: f64, t: f64, mp: f64| {
            writeln!(
                s,
                "{name:<width$}  {n:>9.3}  {d:>9.3}  {:>+7.3}  {t:>8.3}  {mp:>7.3}",
                d - n
            )
            .unwrap();
        };
        for r in &self.rows {
            line(&mut s, &r.name, r.noisy_psnr, r.denoised_psnr, r.seconds, r.megapixels);
        }
        line(
            &mut s,
            AGGREGATE_NAME,
            self.mean_noisy_psnr(),
            self.mean_denoised_psnr(),
            self.total_seconds(),
            self.total_megapixels(),
        );
        writeln!(s, "throughput {:.3} MP/s", self.throughput()).unwrap();
        s
    }
}
