//! Death-count panels on an age-group x calendar-year grid.
//!
//! A [`MortalityPanel`] holds one complete rectangle of counts per
//! population. Age groups are ordered by the integer lower bound parsed
//! from their label ("0-4", "40-44", "80+"), years must be consecutive,
//! and every (age, year, population) cell must be present. The signed
//! difference of the two count grids is a [`GapPanel`].
//!
//! Raw cause-of-death records tabulated by ICD revision and code can be
//! collapsed into a two-cause panel through a [`CauseGroupingConfig`];
//! code ranges compare lexicographically after the numeric suffix is
//! padded to three digits (zeros on range starts, nines on range ends, so
//! "C" spans the whole chapter and "B08-B09" includes "B081").

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Maps the four required roles to CSV column names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub age: String,
    pub year: String,
    pub pop: String,
    pub count: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            age: "age".into(),
            year: "year".into(),
            pop: "pop".into(),
            count: "count".into(),
        }
    }
}

impl CsvSchema {
    /// Parses overrides like "age=Age,count=Deaths"; unmentioned roles keep
    /// their defaults.
    pub fn with_overrides(spec: &str) -> std::result::Result<Self, String> {
        let mut schema = CsvSchema::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (role, column) = part
                .split_once('=')
                .ok_or_else(|| format!("schema entry {part:?} is not role=column"))?;
            let column = column.trim().to_string();
            match role.trim() {
                "age" => schema.age = column,
                "year" => schema.year = column,
                "pop" => schema.pop = column,
                "count" => schema.count = column,
                other => return Err(format!("unknown schema role {other:?}")),
            }
        }
        Ok(schema)
    }
}

/// Integer lower bound of an age-group label: "40-44" -> 40, "80+" -> 80.
pub fn parse_age_lower(label: &str) -> Result<u32> {
    let trimmed = label.trim();
    let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(Error::BadAgeLabel {
            label: label.to_string(),
        });
    }
    digits.parse().map_err(|_| Error::BadAgeLabel {
        label: label.to_string(),
    })
}

fn order_age_labels(labels: impl IntoIterator<Item = String>) -> Result<Vec<(u32, String)>> {
    let mut ages: Vec<(u32, String)> = labels
        .into_iter()
        .map(|label| Ok((parse_age_lower(&label)?, label)))
        .collect::<Result<_>>()?;
    ages.sort_by_key(|(lower, _)| *lower);
    for pair in ages.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::DuplicateAgeLower {
                lower: pair[0].0,
                first: pair[0].1.clone(),
                second: pair[1].1.clone(),
            });
        }
    }
    Ok(ages)
}

/// Complete counts for two populations on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityPanel {
    ages: Vec<String>,
    age_lowers: Vec<u32>,
    years: Vec<i32>,
    counts_a: Grid<u64>,
    counts_b: Grid<u64>,
    labels: (String, String),
}

impl MortalityPanel {
    /// Validates ordering, consecutiveness and shape.
    pub fn new(
        ages: Vec<String>,
        years: Vec<i32>,
        counts_a: Grid<u64>,
        counts_b: Grid<u64>,
        labels: (String, String),
    ) -> Result<Self> {
        if ages.is_empty() || years.is_empty() {
            return Err(Error::EmptyPanel {
                reason: "no age groups or no years".into(),
            });
        }
        let ordered = order_age_labels(ages.iter().cloned())?;
        let age_lowers: Vec<u32> = ordered.iter().map(|(lower, _)| *lower).collect();
        let reordered: Vec<String> = ordered.into_iter().map(|(_, label)| label).collect();
        if reordered != ages {
            return Err(Error::EmptyPanel {
                reason: "age labels not in lower-bound order".into(),
            });
        }
        for pair in years.windows(2) {
            if pair[1] != pair[0] + 1 {
                return Err(Error::EmptyPanel {
                    reason: format!("years not consecutive at {} -> {}", pair[0], pair[1]),
                });
            }
        }
        for (grid, which) in [(&counts_a, "first"), (&counts_b, "second")] {
            if grid.n_ages() != ages.len() || grid.n_years() != years.len() {
                return Err(Error::DimensionMismatch {
                    reason: format!(
                        "{which} count grid is {}x{}, panel is {}x{}",
                        grid.n_ages(),
                        grid.n_years(),
                        ages.len(),
                        years.len()
                    ),
                });
            }
        }
        Ok(MortalityPanel {
            ages,
            age_lowers,
            years,
            counts_a,
            counts_b,
            labels,
        })
    }

    pub fn ages(&self) -> &[String] {
        &self.ages
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn labels(&self) -> (&str, &str) {
        (&self.labels.0, &self.labels.1)
    }

    pub fn counts_a(&self) -> &Grid<u64> {
        &self.counts_a
    }

    pub fn counts_b(&self) -> &Grid<u64> {
        &self.counts_b
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Returns the same panel with the two populations exchanged.
    pub fn swapped(&self) -> MortalityPanel {
        MortalityPanel {
            ages: self.ages.clone(),
            age_lowers: self.age_lowers.clone(),
            years: self.years.clone(),
            counts_a: self.counts_b.clone(),
            counts_b: self.counts_a.clone(),
            labels: (self.labels.1.clone(), self.labels.0.clone()),
        }
    }

    /// Signed cellwise difference, first population minus second.
    pub fn to_gap(&self) -> GapPanel {
        let gaps = self
            .counts_a
            .zip_map(&self.counts_b, |a, b| a as i64 - b as i64)
            .expect("count grids share the panel shape");
        GapPanel {
            ages: self.ages.clone(),
            age_lowers: self.age_lowers.clone(),
            years: self.years.clone(),
            gaps,
            labels: self.labels.clone(),
        }
    }

    /// Restricts to ages with lower bound >= `age_min` (parsed from the
    /// argument) and/or to an inclusive year window. Bounds must lie inside
    /// the panel.
    pub fn subset(&self, age_min: Option<&str>, year_range: Option<(i32, i32)>) -> Result<MortalityPanel> {
        let age_from = match age_min {
            Some(label) => {
                let min_lower = parse_age_lower(label)?;
                let idx = self.age_lowers.iter().position(|&l| l >= min_lower);
                match idx {
                    Some(i) => i,
                    None => {
                        return Err(Error::SubsetBounds {
                            reason: format!(
                                "no age group has lower bound >= {min_lower} (oldest is {})",
                                self.ages.last().expect("panel is nonempty")
                            ),
                        })
                    }
                }
            }
            None => 0,
        };
        let (year_from, year_to) = match year_range {
            Some((start, end)) => {
                let (first, last) = (self.years[0], *self.years.last().expect("nonempty"));
                if start > end {
                    return Err(Error::SubsetBounds {
                        reason: format!("year range {start}..{end} is reversed"),
                    });
                }
                if start < first || end > last {
                    return Err(Error::SubsetBounds {
                        reason: format!(
                            "year range {start}..{end} outside panel years {first}..{last}"
                        ),
                    });
                }
                ((start - first) as usize, (end - first) as usize)
            }
            None => (0, self.years.len() - 1),
        };

        let ages: Vec<String> = self.ages[age_from..].to_vec();
        let years: Vec<i32> = self.years[year_from..=year_to].to_vec();
        let slice = |grid: &Grid<u64>| -> Grid<u64> {
            let mut out = Grid::filled(ages.len(), years.len(), 0u64);
            for (i, age) in (age_from..self.ages.len()).enumerate() {
                for (j, year) in (year_from..=year_to).enumerate() {
                    out.set(i, j, grid.get(age, year));
                }
            }
            out
        };
        let counts_a = slice(&self.counts_a);
        let counts_b = slice(&self.counts_b);
        MortalityPanel::new(ages, years, counts_a, counts_b, self.labels.clone())
    }
}

/// Signed gap counts on the panel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GapPanel {
    ages: Vec<String>,
    age_lowers: Vec<u32>,
    years: Vec<i32>,
    gaps: Grid<i64>,
    labels: (String, String),
}

impl GapPanel {
    /// Validates ordering, consecutiveness and shape, as for count panels.
    pub fn new(
        ages: Vec<String>,
        years: Vec<i32>,
        gaps: Grid<i64>,
        labels: (String, String),
    ) -> Result<Self> {
        if ages.is_empty() || years.is_empty() {
            return Err(Error::EmptyPanel {
                reason: "no age groups or no years".into(),
            });
        }
        let ordered = order_age_labels(ages.iter().cloned())?;
        let age_lowers: Vec<u32> = ordered.iter().map(|(lower, _)| *lower).collect();
        let reordered: Vec<String> = ordered.into_iter().map(|(_, label)| label).collect();
        if reordered != ages {
            return Err(Error::EmptyPanel {
                reason: "age labels not in lower-bound order".into(),
            });
        }
        for pair in years.windows(2) {
            if pair[1] != pair[0] + 1 {
                return Err(Error::EmptyPanel {
                    reason: format!("years not consecutive at {} -> {}", pair[0], pair[1]),
                });
            }
        }
        if gaps.n_ages() != ages.len() || gaps.n_years() != years.len() {
            return Err(Error::DimensionMismatch {
                reason: format!(
                    "gap grid is {}x{}, panel is {}x{}",
                    gaps.n_ages(),
                    gaps.n_years(),
                    ages.len(),
                    years.len()
                ),
            });
        }
        Ok(GapPanel {
            ages,
            age_lowers,
            years,
            gaps,
            labels,
        })
    }

    pub fn ages(&self) -> &[String] {
        &self.ages
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn labels(&self) -> (&str, &str) {
        (&self.labels.0, &self.labels.1)
    }

    pub fn gaps(&self) -> &Grid<i64> {
        &self.gaps
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Gap panel with every sign flipped (populations exchanged).
    pub fn negated(&self) -> GapPanel {
        GapPanel {
            ages: self.ages.clone(),
            age_lowers: self.age_lowers.clone(),
            years: self.years.clone(),
            gaps: self.gaps.map(|g| -g),
            labels: (self.labels.1.clone(), self.labels.0.clone()),
        }
    }
}

/// Loads a long-format CSV with one row per (age, year, population) cell.
///
/// Duplicate cells are summed. Exactly two population labels must appear;
/// the first label encountered becomes the first population. The grid must
/// be complete over observed ages x consecutive years for both populations.
pub fn load_panel(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MortalityPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_panel_from_reader(file, &path.display().to_string(), schema)
}

pub fn load_panel_from_reader(
    reader: impl Read,
    path: &str,
    schema: &CsvSchema,
) -> Result<MortalityPanel> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| Error::BadRecord {
            path: path.to_string(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |column: &str, role: &'static str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_string(),
                column: column.to_string(),
                role,
            })
    };
    let age_col = find(&schema.age, "age")?;
    let year_col = find(&schema.year, "year")?;
    let pop_col = find(&schema.pop, "pop")?;
    let count_col = find(&schema.count, "count")?;

    let mut pop_order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, String, i32), u64> = BTreeMap::new();
    for (i, record) in csv_reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record = record.map_err(|e| Error::BadRecord {
            path: path.to_string(),
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize, what: &str| -> Result<String> {
            record
                .get(col)
                .map(str::to_string)
                .ok_or_else(|| Error::BadRecord {
                    path: path.to_string(),
                    row,
                    message: format!("missing {what} field"),
                })
        };
        let age = field(age_col, "age")?;
        let year: i32 = field(year_col, "year")?
            .parse()
            .map_err(|_| Error::BadRecord {
                path: path.to_string(),
                row,
                message: format!("year {:?} is not an integer", record.get(year_col).unwrap_or("")),
            })?;
        let pop = field(pop_col, "pop")?;
        let count_raw = field(count_col, "count")?;
        let count: i64 = count_raw.parse().map_err(|_| Error::BadRecord {
            path: path.to_string(),
            row,
            message: format!("count {count_raw:?} is not an integer"),
        })?;
        if count < 0 {
            return Err(Error::BadRecord {
                path: path.to_string(),
                row,
                message: format!("negative count {count}"),
            });
        }
        parse_age_lower(&age)?;
        let pop_idx = match pop_order.iter().position(|p| p == &pop) {
            Some(idx) => idx,
            None => {
                pop_order.push(pop.clone());
                pop_order.len() - 1
            }
        };
        *cells.entry((pop_idx, age, year)).or_insert(0) += count as u64;
    }

    if pop_order.len() != 2 {
        return Err(Error::PopulationCount {
            count: pop_order.len(),
            labels: pop_order,
        });
    }
    if cells.is_empty() {
        return Err(Error::EmptyPanel {
            reason: format!("{path} has no data rows"),
        });
    }

    let age_labels: std::collections::BTreeSet<String> =
        cells.keys().map(|(_, age, _)| age.clone()).collect();
    let ordered = order_age_labels(age_labels)?;
    let ages: Vec<String> = ordered.into_iter().map(|(_, label)| label).collect();
    let year_min = cells.keys().map(|(_, _, y)| *y).min().expect("nonempty");
    let year_max = cells.keys().map(|(_, _, y)| *y).max().expect("nonempty");
    let years: Vec<i32> = (year_min..=year_max).collect();

    let mut grids = [
        Grid::filled(ages.len(), years.len(), 0u64),
        Grid::filled(ages.len(), years.len(), 0u64),
    ];
    for (pop_idx, pop) in pop_order.iter().enumerate() {
        for (i, age) in ages.iter().enumerate() {
            for (j, &year) in years.iter().enumerate() {
                match cells.get(&(pop_idx, age.clone(), year)) {
                    Some(&count) => grids[pop_idx].set(i, j, count),
                    None => {
                        return Err(Error::IncompletePanel {
                            age: age.clone(),
                            year,
                            pop: pop.clone(),
                        })
                    }
                }
            }
        }
    }
    let [counts_a, counts_b] = grids;
    let mut order = pop_order.into_iter();
    let labels = (
        order.next().expect("two labels"),
        order.next().expect("two labels"),
    );
    MortalityPanel::new(ages, years, counts_a, counts_b, labels)
}

/// Writes a panel in the long CSV format `load_panel` reads.
///
/// Rows are emitted population by population, then age by age, then year by
/// year, so output is deterministic.
pub fn write_panel_csv(
    panel: &MortalityPanel,
    schema: &CsvSchema,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let to_io_error = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => to_io_error(source),
        other => Error::BadRecord {
            path: path.display().to_string(),
            row: 0,
            message: format!("{other:?}"),
        },
    })?;
    writer
        .write_record([&schema.age, &schema.year, &schema.pop, &schema.count])
        .map_err(|e| Error::BadRecord {
            path: path.display().to_string(),
            row: 0,
            message: e.to_string(),
        })?;
    let (label_a, label_b) = panel.labels();
    for (label, counts) in [(label_a, panel.counts_a()), (label_b, panel.counts_b())] {
        for (i, age) in panel.ages().iter().enumerate() {
            for (j, year) in panel.years().iter().enumerate() {
                writer
                    .write_record([
                        age.as_str(),
                        &year.to_string(),
                        label,
                        &counts.get(i, j).to_string(),
                    ])
                    .map_err(|e| Error::BadRecord {
                        path: path.display().to_string(),
                        row: 1 + i * panel.years().len() + j,
                        message: e.to_string(),
                    })?;
            }
        }
    }
    writer.flush().map_err(to_io_error)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// cause grouping

/// ICD revision a cause-of-death code is tabulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IcdRevision {
    Icd7,
    Icd8,
    Icd9,
    Icd10,
}

impl IcdRevision {
    pub fn parse(text: &str) -> Option<IcdRevision> {
        match text.trim().to_ascii_lowercase().as_str() {
            "icd7" | "7" => Some(IcdRevision::Icd7),
            "icd8" | "8" => Some(IcdRevision::Icd8),
            "icd9" | "9" => Some(IcdRevision::Icd9),
            "icd10" | "10" => Some(IcdRevision::Icd10),
            _ => None,
        }
    }
}

impl fmt::Display for IcdRevision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            IcdRevision::Icd7 => "icd7",
            IcdRevision::Icd8 => "icd8",
            IcdRevision::Icd9 => "icd9",
            IcdRevision::Icd10 => "icd10",
        };
        f.write_str(name)
    }
}

/// Inclusive code range within one letter prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeRange {
    prefix: String,
    start_digits: String,
    end_digits: String,
    source: String,
}

fn split_code(code: &str) -> Option<(String, String)> {
    let trimmed = code.trim();
    if trimmed.is_empty() {
        return None;
    }
    let prefix: String = trimmed
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    let digits = &trimmed[prefix.len()..];
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some((prefix.to_ascii_uppercase(), digits.to_string()))
}

fn pad(digits: &str, fill: char, len: usize) -> String {
    let mut out = digits.to_string();
    while out.len() < len {
        out.push(fill);
    }
    out
}

impl CodeRange {
    /// Parses "A044-A059", a single code "A070", or a bare chapter "C".
    fn parse(text: &str) -> std::result::Result<CodeRange, String> {
        let source = text.trim().to_string();
        let (start, end) = match source.split_once('-') {
            Some((s, e)) => (s.trim(), e.trim()),
            None => (source.as_str(), source.as_str()),
        };
        let (start_prefix, start_digits) =
            split_code(start).ok_or_else(|| format!("bad code {start:?} in range {source:?}"))?;
        let (end_prefix, end_digits) =
            split_code(end).ok_or_else(|| format!("bad code {end:?} in range {source:?}"))?;
        if start_prefix != end_prefix {
            return Err(format!(
                "range {source:?} crosses letter prefixes {start_prefix:?} and {end_prefix:?}"
            ));
        }
        let range = CodeRange {
            prefix: start_prefix,
            start_digits,
            end_digits,
            source,
        };
        let len = range.compare_len(3);
        if pad(&range.start_digits, '0', len) > pad(&range.end_digits, '9', len) {
            return Err(format!("range {:?} has start above end", range.source));
        }
        Ok(range)
    }

    fn compare_len(&self, code_len: usize) -> usize {
        self.start_digits
            .len()
            .max(self.end_digits.len())
            .max(code_len)
            .max(3)
    }

    fn contains(&self, prefix: &str, digits: &str) -> bool {
        if prefix != self.prefix {
            return false;
        }
        let len = self.compare_len(digits.len());
        let code = pad(digits, '0', len);
        pad(&self.start_digits, '0', len) <= code && code <= pad(&self.end_digits, '9', len)
    }

    fn overlaps(&self, other: &CodeRange) -> bool {
        if self.prefix != other.prefix {
            return false;
        }
        let len = self.compare_len(0).max(other.compare_len(0));
        pad(&self.start_digits, '0', len) <= pad(&other.end_digits, '9', len)
            && pad(&other.start_digits, '0', len) <= pad(&self.end_digits, '9', len)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Two named cause groups, each holding code ranges per ICD revision.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseGroupingConfig {
    group_names: (String, String),
    ranges: BTreeMap<IcdRevision, (Vec<CodeRange>, Vec<CodeRange>)>,
}

impl CauseGroupingConfig {
    pub fn group_names(&self) -> (&str, &str) {
        (&self.group_names.0, &self.group_names.1)
    }

    pub fn revisions(&self) -> impl Iterator<Item = IcdRevision> + '_ {
        self.ranges.keys().copied()
    }

    /// Parses the plain-text config: one `[icdN]` section per revision,
    /// each defining the same two `name = range, range, ...` entries.
    pub fn parse(text: &str, path: &str) -> Result<CauseGroupingConfig> {
        let err = |line: usize, message: String| Error::CauseConfig {
            path: path.to_string(),
            line,
            message,
        };
        let mut names: Vec<String> = Vec::new();
        let mut ranges: BTreeMap<IcdRevision, BTreeMap<String, Vec<CodeRange>>> = BTreeMap::new();
        let mut current: Option<IcdRevision> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let revision = IcdRevision::parse(section)
                    .ok_or_else(|| err(line_no, format!("unknown revision {section:?}")))?;
                if ranges.contains_key(&revision) {
                    return Err(err(line_no, format!("duplicate section [{revision}]")));
                }
                ranges.insert(revision, BTreeMap::new());
                current = Some(revision);
                continue;
            }
            let revision =
                current.ok_or_else(|| err(line_no, "entry before any [icdN] section".into()))?;
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected name = ranges, got {line:?}")))?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(err(line_no, "empty cause name".into()));
            }
            if !names.contains(&name) {
                names.push(name.clone());
            }
            let parsed: Vec<CodeRange> = value
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| CodeRange::parse(v).map_err(|m| err(line_no, m)))
                .collect::<Result<_>>()?;
            if parsed.is_empty() {
                return Err(err(line_no, format!("cause {name:?} has no ranges")));
            }
            let section = ranges.get_mut(&revision).expect("section exists");
            if section.insert(name.clone(), parsed).is_some() {
                return Err(err(line_no, format!("cause {name:?} repeated in [{revision}]")));
            }
        }

        if names.len() != 2 {
            return Err(err(
                0,
                format!("config must define exactly two causes, found {names:?}"),
            ));
        }
        if ranges.is_empty() {
            return Err(err(0, "config has no [icdN] sections".into()));
        }
        let mut by_revision = BTreeMap::new();
        for (revision, mut section) in ranges {
            let first = section.remove(&names[0]).ok_or_else(|| {
                err(0, format!("[{revision}] does not define cause {:?}", names[0]))
            })?;
            let second = section.remove(&names[1]).ok_or_else(|| {
                err(0, format!("[{revision}] does not define cause {:?}", names[1]))
            })?;
            for a in &first {
                for b in &second {
                    if a.overlaps(b) {
                        return Err(Error::OverlappingCauses {
                            revision: revision.to_string(),
                            first: names[0].clone(),
                            second: names[1].clone(),
                            a: a.source().to_string(),
                            b: b.source().to_string(),
                        });
                    }
                }
            }
            by_revision.insert(revision, (first, second));
        }
        Ok(CauseGroupingConfig {
            group_names: (names[0].clone(), names[1].clone()),
            ranges: by_revision,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CauseGroupingConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Which cause group (0 or 1) a code belongs to, if any.
    fn classify(&self, revision: IcdRevision, code: &str) -> Option<usize> {
        let (prefix, digits) = split_code(code)?;
        let (first, second) = self.ranges.get(&revision)?;
        if first.iter().any(|r| r.contains(&prefix, &digits)) {
            return Some(0);
        }
        if second.iter().any(|r| r.contains(&prefix, &digits)) {
            return Some(1);
        }
        None
    }
}

/// One tabulated cause-of-death row.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseRecord {
    pub age: String,
    pub year: i32,
    pub revision: IcdRevision,
    pub code: String,
    pub deaths: u64,
}

/// Panel produced by cause grouping, plus the match tally.
#[derive(Debug, Clone)]
pub struct GroupedPanel {
    pub panel: MortalityPanel,
    pub matched_records: usize,
    pub unmatched_records: usize,
    pub unmatched_deaths: u64,
}

/// Sums records into the two configured cause groups.
///
/// The grid spans the ages and consecutive years observed among matched
/// records; cause cells with no matching record are zero. Unmatched records
/// are tallied, never dropped silently.
pub fn group_causes(records: &[CauseRecord], config: &CauseGroupingConfig) -> Result<GroupedPanel> {
    let mut cells: BTreeMap<(usize, String, i32), u64> = BTreeMap::new();
    let mut matched_records = 0usize;
    let mut unmatched_records = 0usize;
    let mut unmatched_deaths = 0u64;
    for record in records {
        match config.classify(record.revision, &record.code) {
            Some(group) => {
                parse_age_lower(&record.age)?;
                matched_records += 1;
                *cells
                    .entry((group, record.age.clone(), record.year))
                    .or_insert(0) += record.deaths;
            }
            None => {
                unmatched_records += 1;
                unmatched_deaths += record.deaths;
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyPanel {
            reason: "no record matched either cause group".into(),
        });
    }
    let age_labels: std::collections::BTreeSet<String> =
        cells.keys().map(|(_, age, _)| age.clone()).collect();
    let ordered = order_age_labels(age_labels)?;
    let ages: Vec<String> = ordered.into_iter().map(|(_, label)| label).collect();
    let year_min = cells.keys().map(|(_, _, y)| *y).min().expect("nonempty");
    let year_max = cells.keys().map(|(_, _, y)| *y).max().expect("nonempty");
    let years: Vec<i32> = (year_min..=year_max).collect();

    let mut grids = [
        Grid::filled(ages.len(), years.len(), 0u64),
        Grid::filled(ages.len(), years.len(), 0u64),
    ];
    for ((group, age, year), count) in cells {
        let i = ages.iter().position(|a| a == &age).expect("age present");
        let j = (year - year_min) as usize;
        let prev = grids[group].get(i, j);
        grids[group].set(i, j, prev + count);
    }
    let [counts_a, counts_b] = grids;
    let panel = MortalityPanel::new(
        ages,
        years,
        counts_a,
        counts_b,
        (config.group_names.0.clone(), config.group_names.1.clone()),
    )?;
    Ok(GroupedPanel {
        panel,
        matched_records,
        unmatched_records,
        unmatched_deaths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_panel() -> MortalityPanel {
        MortalityPanel::new(
            vec!["0-4".into(), "5-9".into(), "10-14".into()],
            vec![1990, 1991, 1992, 1993],
            Grid::from_vec(3, 4, (1..=12).collect()).unwrap(),
            Grid::from_vec(3, 4, (13..=24).collect()).unwrap(),
            ("alpha".into(), "beta".into()),
        )
        .unwrap()
    }

    #[test]
    fn age_lower_bounds_parse() {
        assert_eq!(parse_age_lower("0-4").unwrap(), 0);
        assert_eq!(parse_age_lower("40-44").unwrap(), 40);
        assert_eq!(parse_age_lower("80+").unwrap(), 80);
        assert_eq!(parse_age_lower(" 40 ").unwrap(), 40);
        assert!(parse_age_lower("all").is_err());
        assert!(parse_age_lower("").is_err());
    }

    #[test]
    fn gap_is_signed_difference() {
        let gap = small_panel().to_gap();
        assert_eq!(gap.gaps().get(0, 0), 1 - 13);
        assert_eq!(gap.gaps().get(2, 3), 12 - 24);
        assert_eq!(gap.labels(), ("alpha", "beta"));
    }

    #[test]
    fn negated_gap_swaps_labels_and_signs() {
        let gap = small_panel().to_gap();
        let neg = gap.negated();
        assert_eq!(neg.gaps().get(1, 1), -gap.gaps().get(1, 1));
        assert_eq!(neg.labels(), ("beta", "alpha"));
    }

    #[test]
    fn subset_by_age_and_years() {
        let panel = small_panel();
        let sub = panel.subset(Some("5"), Some((1991, 1992))).unwrap();
        assert_eq!(sub.ages(), &["5-9", "10-14"]);
        assert_eq!(sub.years(), &[1991, 1992]);
        assert_eq!(sub.counts_a().get(0, 0), panel.counts_a().get(1, 1));
    }

    #[test]
    fn subset_bounds_validated() {
        let panel = small_panel();
        assert!(panel.subset(None, Some((1989, 1992))).is_err());
        assert!(panel.subset(None, Some((1991, 1999))).is_err());
        assert!(panel.subset(None, Some((1992, 1991))).is_err());
        assert!(panel.subset(Some("90"), None).is_err());
    }

    #[test]
    fn nested_subsets_compose() {
        let panel = small_panel();
        let once = panel.subset(Some("5"), Some((1991, 1993))).unwrap();
        let twice = once.subset(Some("10"), Some((1992, 1993))).unwrap();
        let direct = panel.subset(Some("10"), Some((1992, 1993))).unwrap();
        assert_eq!(twice, direct);
    }

    fn load_csv(text: &str) -> Result<MortalityPanel> {
        load_panel_from_reader(text.as_bytes(), "test.csv", &CsvSchema::default())
    }

    #[test]
    fn csv_round_trip_with_duplicates_summed() {
        let panel = load_csv(
            "age,year,pop,count\n\
             0-4,2000,x,3\n\
             0-4,2000,x,2\n\
             0-4,2001,x,4\n\
             5-9,2000,x,1\n\
             5-9,2001,x,0\n\
             0-4,2000,y,7\n\
             0-4,2001,y,8\n\
             5-9,2000,y,9\n\
             5-9,2001,y,10\n",
        )
        .unwrap();
        assert_eq!(panel.labels(), ("x", "y"));
        assert_eq!(panel.counts_a().get(0, 0), 5); // duplicates summed
        assert_eq!(panel.counts_b().get(1, 1), 10);
        assert_eq!(panel.years(), &[2000, 2001]);
    }

    #[test]
    fn written_csv_loads_back_identically() {
        let panel = load_csv(
            "age,year,pop,count\n\
             0-4,2000,x,3\n\
             0-4,2001,x,4\n\
             5-9,2000,x,1\n\
             5-9,2001,x,0\n\
             0-4,2000,y,7\n\
             0-4,2001,y,8\n\
             5-9,2000,y,9\n\
             5-9,2001,y,10\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let schema = CsvSchema::default();
        write_panel_csv(&panel, &schema, &path).unwrap();
        let back = load_panel(&path, &schema).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn csv_schema_override_maps_columns() {
        let schema = CsvSchema::with_overrides("age=Age, count=Deaths").unwrap();
        let panel = load_panel_from_reader(
            "Age,year,pop,Deaths\n0-4,2000,x,1\n0-4,2000,y,2\n".as_bytes(),
            "test.csv",
            &schema,
        )
        .unwrap();
        assert_eq!(panel.counts_b().get(0, 0), 2);
        assert!(CsvSchema::with_overrides("bogus=x").is_err());
    }

    #[test]
    fn csv_missing_cell_named_in_error() {
        let err = load_csv(
            "age,year,pop,count\n\
             0-4,2000,x,3\n\
             0-4,2001,x,4\n\
             0-4,2000,y,7\n",
        )
        .unwrap_err();
        match err {
            Error::IncompletePanel { age, year, pop } => {
                assert_eq!((age.as_str(), year, pop.as_str()), ("0-4", 2001, "y"));
            }
            other => panic!("expected incomplete panel, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_negative_count_and_extra_pops() {
        assert!(matches!(
            load_csv("age,year,pop,count\n0-4,2000,x,-1\n"),
            Err(Error::BadRecord { .. })
        ));
        assert!(matches!(
            load_csv(
                "age,year,pop,count\n0-4,2000,x,1\n0-4,2000,y,1\n0-4,2000,z,1\n"
            ),
            Err(Error::PopulationCount { count: 3, .. })
        ));
    }

    #[test]
    fn csv_missing_column_is_reported() {
        assert!(matches!(
            load_csv("age,year,count\n0-4,2000,3\n"),
            Err(Error::MissingColumn { .. })
        ));
    }

    const CAUSE_CONFIG: &str = "\
# two broad cause groups
[icd10]
cancer = C
circulatory = I00-I99
[icd9]
cancer = B08-B09, B100, B101, B109, B11-B17
circulatory = B25-B30
";

    #[test]
    fn cause_config_parses_and_classifies() {
        let config = CauseGroupingConfig::parse(CAUSE_CONFIG, "causes.cfg").unwrap();
        assert_eq!(config.group_names(), ("cancer", "circulatory"));
        assert_eq!(config.classify(IcdRevision::Icd10, "C50"), Some(0));
        assert_eq!(config.classify(IcdRevision::Icd10, "I25"), Some(1));
        assert_eq!(config.classify(IcdRevision::Icd10, "J44"), None);
        // zero-padded comparison: B081 sits inside B08-B09
        assert_eq!(config.classify(IcdRevision::Icd9, "B081"), Some(0));
        assert_eq!(config.classify(IcdRevision::Icd9, "B10"), Some(0)); // zero-pads to B100
        assert_eq!(config.classify(IcdRevision::Icd9, "B102"), None);
        assert_eq!(config.classify(IcdRevision::Icd9, "B109"), Some(0));
        // unknown revision section -> unmatched
        assert_eq!(config.classify(IcdRevision::Icd7, "A044"), None);
    }

    #[test]
    fn cause_config_rejects_overlap_and_bad_ranges() {
        let overlap = "\
[icd10]
cancer = C00-C50
circulatory = C40-C99
";
        assert!(matches!(
            CauseGroupingConfig::parse(overlap, "causes.cfg"),
            Err(Error::OverlappingCauses { .. })
        ));
        let reversed = "\
[icd10]
cancer = C90-C10
circulatory = I
";
        assert!(CauseGroupingConfig::parse(reversed, "causes.cfg").is_err());
        let one_cause = "[icd10]\ncancer = C\n";
        assert!(CauseGroupingConfig::parse(one_cause, "causes.cfg").is_err());
    }

    #[test]
    fn group_causes_sums_and_tallies() {
        let config = CauseGroupingConfig::parse(CAUSE_CONFIG, "causes.cfg").unwrap();
        let rec = |age: &str, year: i32, code: &str, deaths: u64| CauseRecord {
            age: age.into(),
            year,
            revision: IcdRevision::Icd10,
            code: code.into(),
            deaths,
        };
        let records = vec![
            rec("0-4", 2000, "C50", 1),
            rec("0-4", 2000, "C61", 2),
            rec("0-4", 2000, "I25", 5),
            rec("0-4", 2001, "C50", 3),
            rec("0-4", 2001, "I21", 6),
            rec("0-4", 2001, "J44", 9), // unmatched
        ];
        let grouped = group_causes(&records, &config).unwrap();
        assert_eq!(grouped.matched_records, 5);
        assert_eq!(grouped.unmatched_records, 1);
        assert_eq!(grouped.unmatched_deaths, 9);
        assert_eq!(grouped.panel.labels(), ("cancer", "circulatory"));
        assert_eq!(grouped.panel.counts_a().get(0, 0), 3); // C50 + C61
        assert_eq!(grouped.panel.counts_b().get(0, 1), 6);
        // total deaths conserved: matched into panel, unmatched tallied
        let panel_total: u64 = grouped.panel.counts_a().as_slice().iter().sum::<u64>()
            + grouped.panel.counts_b().as_slice().iter().sum::<u64>();
        let input_total: u64 = records.iter().map(|r| r.deaths).sum();
        assert_eq!(panel_total + grouped.unmatched_deaths, input_total);
    }

    #[test]
    fn swapped_panel_swaps_everything() {
        let panel = small_panel();
        let swapped = panel.swapped();
        assert_eq!(swapped.labels(), ("beta", "alpha"));
        assert_eq!(swapped.counts_a(), panel.counts_b());
        let g = panel.to_gap();
        let gs = swapped.to_gap();
        assert_eq!(gs.gaps().get(0, 0), -g.gaps().get(0, 0));
    }
}
