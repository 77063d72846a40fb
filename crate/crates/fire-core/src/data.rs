//! Dataset ingestion, chronological splitting, channel-independent
//! windowing, instance normalization, and patching.
//!
//! CSV layout: header row, first column a date string (kept only for
//! ordering), remaining columns numeric channels. Splits are chronological
//! and strictly disjoint. Windows are univariate (channel-independent
//! processing): one multivariate row range yields one window per channel,
//! each normalized by its own lookback mean/std.

use std::fmt;
use std::path::Path;

use serde::Serialize;

pub type DataResult<T> = Result<T, DataError>;

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    /// Malformed rows beyond the configured tolerance; lists 1-based line
    /// numbers (header is line 1).
    TooManyBadRows {
        tolerance: usize,
        lines: Vec<usize>,
    },
    EmptyFile,
    RatiosInvalid {
        sum: f64,
    },
    /// A named preset needs more rows than the series has.
    TooShortForPreset {
        preset: &'static str,
        need: usize,
        got: usize,
    },
    SegmentTooShort {
        segment: &'static str,
        len: usize,
        need: usize,
    },
    ChannelCountMismatch {
        expected: usize,
        got: usize,
    },
    Invalid(&'static str),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "io error: {e}"),
            DataError::TooManyBadRows { tolerance, lines } => write!(
                f,
                "{} unparseable rows exceed tolerance {tolerance}; lines {:?}",
                lines.len(),
                lines
            ),
            DataError::EmptyFile => write!(f, "no data rows"),
            DataError::RatiosInvalid { sum } => {
                write!(f, "split ratios must sum to 1, got {sum}")
            }
            DataError::TooShortForPreset { preset, need, got } => {
                write!(f, "preset {preset} needs at least {need} rows, got {got}")
            }
            DataError::SegmentTooShort { segment, len, need } => {
                write!(f, "{segment} segment of {len} rows is shorter than {need}")
            }
            DataError::ChannelCountMismatch { expected, got } => {
                write!(f, "expected {expected} channels, found {got}")
            }
            DataError::Invalid(what) => write!(f, "{what}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

/// Multivariate series, row-major [L_total × C].
#[derive(Clone, Debug)]
pub struct Series {
    values: Vec<f64>,
    n_channels: usize,
    pub channel_names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
}

impl Series {
    pub fn new(
        values: Vec<f64>,
        channel_names: Vec<String>,
        timestamps: Option<Vec<String>>,
    ) -> DataResult<Self> {
        let c = channel_names.len();
        if c == 0 || values.len() % c != 0 {
            return Err(DataError::Invalid(
                "series values must be a multiple of the channel count",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("series contains non-finite values"));
        }
        Ok(Series {
            values,
            n_channels: c,
            channel_names,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    pub fn at(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.n_channels + channel]
    }

    /// Contiguous copy of one channel.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.at(r, channel)).collect()
    }

    pub fn view(&self) -> SeriesView<'_> {
        SeriesView {
            series: self,
            start: 0,
            len: self.len(),
        }
    }
}

/// Borrowed chronological slice of a [`Series`].
#[derive(Clone, Copy, Debug)]
pub struct SeriesView<'a> {
    series: &'a Series,
    pub start: usize,
    pub len: usize,
}

impl<'a> SeriesView<'a> {
    #[inline]
    pub fn at(&self, row: usize, channel: usize) -> f64 {
        debug_assert!(row < self.len);
        self.series.at(self.start + row, channel)
    }

    pub fn n_channels(&self) -> usize {
        self.series.n_channels()
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.len).map(|r| self.at(r, channel)).collect()
    }
}

/// What to do with rows containing missing values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    Drop,
    ForwardFill,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub fill: FillPolicy,
    /// Unparseable rows tolerated (skipped) before the load fails.
    pub max_bad_rows: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            fill: FillPolicy::Drop,
            max_bad_rows: 0,
        }
    }
}

/// What happened during ingestion; emitted as JSON alongside runs.
#[derive(Clone, Debug, Serialize)]
pub struct LoadReport {
    pub path: String,
    pub rows_read: usize,
    pub rows_loaded: usize,
    pub rows_dropped_missing: usize,
    pub rows_filled: usize,
    /// 1-based line numbers of rows skipped as unparseable.
    pub bad_row_lines: Vec<usize>,
    pub fill_policy: FillPolicy,
    pub channels: Vec<String>,
}

/// Load a CSV of the benchmark layout. Missing cells (empty/`nan`/`null`)
/// follow the fill policy; rows that fail to parse are skipped and counted
/// against `max_bad_rows`.
pub fn load_csv(path: &Path, opts: &LoadOptions) -> DataResult<(Series, LoadReport)> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|_| DataError::Invalid("missing header row"))?
        .clone();
    if headers.len() < 2 {
        return Err(DataError::Invalid(
            "need a timestamp column plus at least one channel",
        ));
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let n_channels = channel_names.len();

    let mut values: Vec<f64> = Vec::new();
    let mut timestamps: Vec<String> = Vec::new();
    let mut last_row: Option<Vec<f64>> = None;
    let mut rows_read = 0usize;
    let mut dropped = 0usize;
    let mut filled = 0usize;
    let mut bad_lines: Vec<usize> = Vec::new();

    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2; // header is line 1
        rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                bad_lines.push(line);
                continue;
            }
        };
        if record.len() != n_channels + 1 {
            bad_lines.push(line);
            continue;
        }
        let mut row = Vec::with_capacity(n_channels);
        let mut missing = false;
        let mut bad = false;
        for cell in record.iter().skip(1) {
            let trimmed = cell.trim();
            if trimmed.is_empty()
                || trimmed.eq_ignore_ascii_case("nan")
                || trimmed.eq_ignore_ascii_case("na")
                || trimmed.eq_ignore_ascii_case("null")
            {
                missing = true;
                row.push(f64::NAN);
                continue;
            }
            match trimmed.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    missing = true;
                    row.push(f64::NAN);
                }
                Err(_) => {
                    bad = true;
                    break;
                }
            }
        }
        if bad {
            bad_lines.push(line);
            continue;
        }
        if missing {
            match opts.fill {
                FillPolicy::Drop => {
                    dropped += 1;
                    continue;
                }
                FillPolicy::ForwardFill => match &last_row {
                    Some(prev) => {
                        for (i, v) in row.iter_mut().enumerate() {
                            if !v.is_finite() {
                                *v = prev[i];
                            }
                        }
                        filled += 1;
                    }
                    None => {
                        // nothing to fill from
                        dropped += 1;
                        continue;
                    }
                },
            }
        }
        timestamps.push(record.get(0).unwrap_or("").to_string());
        values.extend_from_slice(&row);
        last_row = Some(row);
    }

    if bad_lines.len() > opts.max_bad_rows {
        return Err(DataError::TooManyBadRows {
            tolerance: opts.max_bad_rows,
            lines: bad_lines,
        });
    }
    if values.is_empty() {
        return Err(DataError::EmptyFile);
    }

    let report = LoadReport {
        path: path.display().to_string(),
        rows_read,
        rows_loaded: values.len() / n_channels,
        rows_dropped_missing: dropped,
        rows_filled: filled,
        bad_row_lines: bad_lines,
        fill_policy: opts.fill,
        channels: channel_names.clone(),
    };
    let series = Series::new(values, channel_names, Some(timestamps))?;
    Ok((series, report))
}

/// Chronological split protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    /// Arbitrary (train, val, test) fractions summing to 1.
    Ratios(f64, f64, f64),
    /// Hourly ETT border protocol: 12/4/4 months of hourly rows
    /// ([0,8640) / [8640,11520) / [11520,14400)), the 6:2:2 convention of
    /// the public benchmark loaders.
    Etth,
    /// 15-minute ETT borders: the same months at 4 rows per hour
    /// ([0,34560) / [34560,46080) / [46080,57600)).
    Ettm,
    /// 7:1:2 protocol used for Weather/Traffic/Electricity:
    /// train = ⌊0.7·L⌋, test = ⌊0.2·L⌋, val = remainder.
    Ratio712,
}

const ETTH_BORDERS: [usize; 4] = [0, 8640, 11520, 14400];
const ETTM_BORDERS: [usize; 4] = [0, 34560, 46080, 57600];

/// Split a series into chronological, disjoint (train, val, test) views and
/// verify each can host at least one lookback+horizon window.
pub fn split<'a>(
    series: &'a Series,
    spec: SplitSpec,
    lookback: usize,
    horizon: usize,
) -> DataResult<[SeriesView<'a>; 3]> {
    let l = series.len();
    let borders: [usize; 4] = match spec {
        SplitSpec::Ratios(a, b, c) => {
            let sum = a + b + c;
            if (sum - 1.0).abs() > 1e-9 || a <= 0.0 || b < 0.0 || c < 0.0 {
                return Err(DataError::RatiosInvalid { sum });
            }
            let train = (a * l as f64).floor() as usize;
            let val = (b * l as f64).floor() as usize;
            [0, train, train + val, l]
        }
        SplitSpec::Etth => {
            if l < ETTH_BORDERS[3] {
                return Err(DataError::TooShortForPreset {
                    preset: "etth",
                    need: ETTH_BORDERS[3],
                    got: l,
                });
            }
            ETTH_BORDERS
        }
        SplitSpec::Ettm => {
            if l < ETTM_BORDERS[3] {
                return Err(DataError::TooShortForPreset {
                    preset: "ettm",
                    need: ETTM_BORDERS[3],
                    got: l,
                });
            }
            ETTM_BORDERS
        }
        SplitSpec::Ratio712 => {
            let train = (0.7 * l as f64).floor() as usize;
            let test = (0.2 * l as f64).floor() as usize;
            [0, train, l - test, l]
        }
    };

    let need = lookback + horizon;
    let names = ["train", "val", "test"];
    let mut views = Vec::with_capacity(3);
    for i in 0..3 {
        let len = borders[i + 1] - borders[i];
        if len < need {
            return Err(DataError::SegmentTooShort {
                segment: names[i],
                len,
                need,
            });
        }
        views.push(SeriesView {
            series,
            start: borders[i],
            len,
        });
    }
    Ok([views[0], views[1], views[2]])
}

/// Per-window normalization statistics (from the lookback only).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Guard for constant windows.
pub const STD_FLOOR: f64 = 1e-8;

pub fn norm_stats(x: &[f64]) -> NormStats {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    NormStats {
        mean,
        std: if std < STD_FLOOR { 1.0 } else { std },
    }
}

pub fn normalize(x: &[f64], stats: NormStats) -> Vec<f64> {
    x.iter().map(|v| (v - stats.mean) / stats.std).collect()
}

/// Invert instance normalization: y·std + mean.
pub fn denormalize(y_hat: &[f64], stats: NormStats) -> Vec<f64> {
    y_hat.iter().map(|v| v * stats.std + stats.mean).collect()
}

/// One univariate training example.
#[derive(Clone, Debug)]
pub struct Window {
    /// Raw lookback segment.
    pub x: Vec<f64>,
    /// Raw target segment.
    pub y: Vec<f64>,
    pub channel: usize,
    pub stats: NormStats,
}

impl Window {
    pub fn normalized_x(&self) -> Vec<f64> {
        normalize(&self.x, self.stats)
    }

    /// Target on the window's normalized scale.
    pub fn normalized_y(&self) -> Vec<f64> {
        normalize(&self.y, self.stats)
    }
}

/// Lazy sliding-window index over a series view: stride-1 starts × channels.
/// Windows are materialized on demand so large splits stay cheap.
#[derive(Clone, Copy, Debug)]
pub struct WindowSet<'a> {
    view: SeriesView<'a>,
    pub lookback: usize,
    pub horizon: usize,
    n_starts: usize,
}

impl<'a> WindowSet<'a> {
    pub fn len(&self) -> usize {
        self.n_starts * self.view.n_channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.view.n_channels()
    }

    pub fn n_starts(&self) -> usize {
        self.n_starts
    }

    /// Materialize window `i`; ordering is start-major, channel-minor.
    pub fn get(&self, i: usize) -> Window {
        debug_assert!(i < self.len());
        let c = self.view.n_channels();
        let (start, channel) = (i / c, i % c);
        let x: Vec<f64> = (0..self.lookback)
            .map(|t| self.view.at(start + t, channel))
            .collect();
        let y: Vec<f64> = (0..self.horizon)
            .map(|t| self.view.at(start + self.lookback + t, channel))
            .collect();
        let stats = norm_stats(&x);
        Window {
            x,
            y,
            channel,
            stats,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Window> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// Stride-1 sliding windows over a view. With channel-independent processing
/// every multivariate position yields one univariate window per channel;
/// without it the series must already be univariate.
pub fn make_windows<'a>(
    view: SeriesView<'a>,
    lookback: usize,
    horizon: usize,
    channel_independent: bool,
) -> DataResult<WindowSet<'a>> {
    if lookback == 0 || horizon == 0 {
        return Err(DataError::Invalid("lookback and horizon must be positive"));
    }
    if !channel_independent && view.n_channels() != 1 {
        return Err(DataError::Invalid(
            "channel_independent=false requires a univariate series",
        ));
    }
    if view.len < lookback + horizon {
        return Err(DataError::SegmentTooShort {
            segment: "window source",
            len: view.len,
            need: lookback + horizon,
        });
    }
    Ok(WindowSet {
        view,
        lookback,
        horizon,
        n_starts: view.len - lookback - horizon + 1,
    })
}

/// Overlapping patches of a (normalized) lookback.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    /// Row-major [N_p × L_p].
    pub patches: Vec<f64>,
    pub n_patches: usize,
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchSet {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.patches[p * self.patch_len..(p + 1) * self.patch_len]
    }
}

/// Slice `x` into ⌊(L−L_p)/stride⌋+1 contiguous patches; tail samples not
/// covered by the last patch are dropped.
pub fn patch(x: &[f64], patch_len: usize, stride: usize) -> DataResult<PatchSet> {
    if patch_len == 0 || stride == 0 {
        return Err(DataError::Invalid("patch_len and stride must be positive"));
    }
    if patch_len > x.len() {
        return Err(DataError::SegmentTooShort {
            segment: "patch source",
            len: x.len(),
            need: patch_len,
        });
    }
    let n_patches = (x.len() - patch_len) / stride + 1;
    let mut patches = Vec::with_capacity(n_patches * patch_len);
    for p in 0..n_patches {
        patches.extend_from_slice(&x[p * stride..p * stride + patch_len]);
    }
    Ok(PatchSet {
        patches,
        n_patches,
        patch_len,
        stride,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp_csv(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("fire-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn synth_series(len: usize, channels: usize) -> Series {
        let mut values = Vec::with_capacity(len * channels);
        for r in 0..len {
            for c in 0..channels {
                values.push((r * channels + c) as f64);
            }
        }
        Series::new(
            values,
            (0..channels).map(|c| format!("ch{c}")).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn load_small_csv() {
        let path = write_temp_csv("small.csv", "date,v\n2020-01-01,1.5\n2020-01-02,2.5\n2020-01-03,3.5\n");
        let (series, report) = load_csv(&path, &LoadOptions::default()).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(series.n_channels(), 1);
        assert_eq!(series.at(1, 0), 2.5);
        assert_eq!(report.rows_loaded, 3);
        assert!(report.bad_row_lines.is_empty());
    }

    #[test]
    fn nan_row_dropped_and_reported() {
        let path = write_temp_csv(
            "nanrow.csv",
            "date,a,b\n1,1.0,2.0\n2,nan,3.0\n3,4.0,5.0\n",
        );
        let (series, report) = load_csv(&path, &LoadOptions::default()).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(report.rows_dropped_missing, 1);
        assert_eq!(series.at(1, 1), 5.0);
    }

    #[test]
    fn nan_row_forward_filled() {
        let path = write_temp_csv(
            "ffill.csv",
            "date,a,b\n1,1.0,2.0\n2,,3.0\n3,4.0,5.0\n",
        );
        let opts = LoadOptions {
            fill: FillPolicy::ForwardFill,
            ..LoadOptions::default()
        };
        let (series, report) = load_csv(&path, &opts).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(report.rows_filled, 1);
        assert_eq!(series.at(1, 0), 1.0); // carried forward
        assert_eq!(series.at(1, 1), 3.0);
    }

    #[test]
    fn unparseable_rows_error_with_line_numbers() {
        let path = write_temp_csv(
            "garbage.csv",
            "date,a\n1,1.0\n2,xyz\n3,2.0\n4,zzz\n",
        );
        match load_csv(&path, &LoadOptions::default()) {
            Err(DataError::TooManyBadRows { lines, .. }) => assert_eq!(lines, vec![3, 5]),
            other => panic!("expected TooManyBadRows, got {other:?}"),
        }
        // with tolerance the rows are skipped instead
        let opts = LoadOptions {
            max_bad_rows: 2,
            ..LoadOptions::default()
        };
        let (series, report) = load_csv(&path, &opts).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(report.bad_row_lines, vec![3, 5]);
    }

    #[test]
    fn ratio_split_lengths() {
        let series = synth_series(100, 1);
        let [tr, va, te] = split(&series, SplitSpec::Ratios(0.7, 0.1, 0.2), 3, 3).unwrap();
        assert_eq!((tr.len, va.len, te.len), (70, 10, 20));
        assert_eq!((tr.start, va.start, te.start), (0, 70, 80));
    }

    #[test]
    fn etth_preset_borders() {
        let series = synth_series(17420, 7);
        let [tr, va, te] = split(&series, SplitSpec::Etth, 96, 96).unwrap();
        // Border constants of the public benchmark loaders: 12/4/4 months of
        // hourly rows, a 6:2:2 split of the 20-month window.
        assert_eq!((tr.start, tr.len), (0, 8640));
        assert_eq!((va.start, va.len), (8640, 2880));
        assert_eq!((te.start, te.len), (11520, 2880));
        assert_eq!(va.len * 3, tr.len); // 6:2:2
        assert_eq!(te.len, va.len);
    }

    #[test]
    fn ettm_preset_borders() {
        let series = synth_series(69680, 7);
        let [tr, va, te] = split(&series, SplitSpec::Ettm, 96, 96).unwrap();
        assert_eq!((tr.start, tr.len), (0, 34560));
        assert_eq!((va.start, va.len), (34560, 11520));
        assert_eq!((te.start, te.len), (46080, 11520));
    }

    #[test]
    fn splits_are_chronological_and_disjoint() {
        let series = synth_series(1000, 2);
        let [tr, va, te] = split(&series, SplitSpec::Ratio712, 10, 10).unwrap();
        assert_eq!(tr.start + tr.len, va.start);
        assert_eq!(va.start + va.len, te.start);
        assert_eq!(te.start + te.len, series.len());
    }

    #[test]
    fn short_segment_rejected() {
        let series = synth_series(300, 1);
        // val segment = 30 rows < 96+96
        match split(&series, SplitSpec::Ratios(0.7, 0.1, 0.2), 96, 96) {
            Err(DataError::SegmentTooShort { segment, len, need }) => {
                assert_eq!((segment, len, need), ("val", 30, 192));
            }
            other => panic!("expected SegmentTooShort, got {other:?}"),
        }
    }

    #[test]
    fn window_count_formula() {
        let series = synth_series(200, 1);
        let ws = make_windows(series.view(), 96, 96, true).unwrap();
        assert_eq!(ws.len(), 9); // 200 − 192 + 1
    }

    #[test]
    fn channel_independent_multiplies_window_count() {
        let series = synth_series(200, 7);
        let ws = make_windows(series.view(), 96, 96, true).unwrap();
        assert_eq!(ws.len(), 9 * 7);
        // every channel appears equally often
        let mut counts = vec![0usize; 7];
        for w in ws.iter() {
            counts[w.channel] += 1;
        }
        assert!(counts.iter().all(|&c| c == 9));
    }

    #[test]
    fn constant_window_guard() {
        let series = Series::new(vec![5.0; 250], vec!["c".into()], None).unwrap();
        let ws = make_windows(series.view(), 96, 96, true).unwrap();
        let w = ws.get(0);
        assert_eq!(w.stats.std, 1.0);
        assert!(w.normalized_x().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn window_contents_line_up() {
        let series = synth_series(20, 2);
        let ws = make_windows(series.view(), 4, 2, true).unwrap();
        // window 1 is (start 0, channel 1)
        let w = ws.get(1);
        assert_eq!(w.channel, 1);
        assert_eq!(w.x, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(w.y, vec![9.0, 11.0]);
    }

    #[test]
    fn denormalize_examples() {
        let stats = NormStats {
            mean: 5.0,
            std: 2.0,
        };
        assert_eq!(denormalize(&[0.0, 0.0], stats), vec![5.0, 5.0]);
        let stats = NormStats {
            mean: 0.0,
            std: 3.0,
        };
        assert_eq!(denormalize(&[1.0, -1.0], stats), vec![3.0, -3.0]);
    }

    #[test]
    fn normalize_roundtrip_identity() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect();
        let stats = norm_stats(&x);
        let back = denormalize(&normalize(&x, stats), stats);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_counts() {
        let x = vec![0.0; 96];
        assert_eq!(patch(&x, 16, 8).unwrap().n_patches, 11);
        assert_eq!(patch(&x, 96, 96).unwrap().n_patches, 1);
        assert_eq!(patch(&x, 48, 24).unwrap().n_patches, 3);
    }

    #[test]
    fn patches_are_contiguous_slices() {
        let x: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let ps = patch(&x, 8, 4).unwrap();
        assert_eq!(ps.n_patches, 7);
        for p in 0..ps.n_patches {
            assert_eq!(ps.row(p), &x[p * 4..p * 4 + 8]);
        }
    }

    #[test]
    fn patch_longer_than_input_rejected() {
        let x = vec![0.0; 10];
        assert!(matches!(
            patch(&x, 16, 8),
            Err(DataError::SegmentTooShort { .. })
        ));
    }
}
