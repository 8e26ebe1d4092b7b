//! Parsers for the three `::`-delimited ML-1M files. movies.dat is decoded
//! as Latin-1 (the published file is not UTF-8); users.dat and ratings.dat
//! are ASCII.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Catalog, DatasetError, Gender, ItemRecord, RatingRow, UserRecord};

pub fn load(dir: &Path) -> Result<Catalog, DatasetError> {
    let users_path = dir.join("users.dat");
    let movies_path = dir.join("movies.dat");
    let ratings_path = dir.join("ratings.dat");
    for path in [&users_path, &movies_path, &ratings_path] {
        if !path.is_file() {
            return Err(DatasetError::MissingFile(path.display().to_string()));
        }
    }

    let users = parse_users(&read_latin1(&users_path)?)?;
    let items = parse_movies(&read_latin1(&movies_path)?)?;
    let ratings = parse_ratings(&read_latin1(&ratings_path)?)?;

    for (idx, row) in ratings.iter().enumerate() {
        let line = idx + 1;
        if !users.contains_key(&row.user_id) {
            return Err(DatasetError::DanglingReference {
                file: "ratings.dat".into(),
                line,
                what: "user",
                id: row.user_id,
            });
        }
        if !items.contains_key(&row.item_id) {
            return Err(DatasetError::DanglingReference {
                file: "ratings.dat".into(),
                line,
                what: "item",
                id: row.item_id,
            });
        }
    }

    let mut load_warnings = Vec::new();
    if ratings.is_empty() {
        let msg = "ratings.dat is empty: catalog has no interactions".to_string();
        log::warn!("{msg}");
        load_warnings.push(msg);
    }
    log::info!(
        "loaded catalog: {} users, {} items, {} ratings",
        users.len(),
        items.len(),
        ratings.len()
    );

    Ok(Catalog {
        users,
        items,
        ratings,
        load_warnings,
    })
}

/// Reads a file and decodes each byte as its Latin-1 code point. For pure
/// ASCII files this is the identity.
fn read_latin1(path: &Path) -> Result<String, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn malformed(file: &str, line: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        file: file.into(),
        line,
        reason: reason.into(),
    }
}

fn split_fields<'a>(
    file: &str,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, DatasetError> {
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != expected {
        return Err(malformed(
            file,
            line_no,
            format!("expected {expected} `::`-delimited fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_num<T: std::str::FromStr>(
    file: &str,
    line_no: usize,
    field: &str,
    what: &str,
) -> Result<T, DatasetError> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(file, line_no, format!("invalid {what}: {field:?}")))
}

fn parse_users(text: &str) -> Result<BTreeMap<u32, UserRecord>, DatasetError> {
    const FILE: &str = "users.dat";
    let mut users = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_fields(FILE, line_no, line, 5)?;
        let user_id: u32 = parse_num(FILE, line_no, fields[0], "user id")?;
        let gender = match fields[1] {
            "M" => Gender::M,
            "F" => Gender::F,
            other => return Err(malformed(FILE, line_no, format!("invalid gender: {other:?}"))),
        };
        let record = UserRecord {
            user_id,
            gender,
            age_bracket: parse_num(FILE, line_no, fields[2], "age bracket")?,
            occupation: parse_num(FILE, line_no, fields[3], "occupation code")?,
            zip: fields[4].to_string(),
        };
        if users.insert(user_id, record).is_some() {
            return Err(malformed(FILE, line_no, format!("duplicate user id {user_id}")));
        }
    }
    Ok(users)
}

fn parse_movies(text: &str) -> Result<BTreeMap<u32, ItemRecord>, DatasetError> {
    const FILE: &str = "movies.dat";
    let mut items = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_fields(FILE, line_no, line, 3)?;
        let item_id: u32 = parse_num(FILE, line_no, fields[0], "item id")?;
        let title = fields[1].to_string();
        let year = parse_year(&title)
            .ok_or_else(|| malformed(FILE, line_no, format!("no trailing (YYYY) in {title:?}")))?;
        if !(1900..=2010).contains(&year) {
            return Err(malformed(FILE, line_no, format!("year {year} outside 1900..=2010")));
        }
        let mut genres: Vec<String> = Vec::new();
        for genre in fields[2].split('|') {
            let genre = genre.trim();
            if !genre.is_empty() && !genres.iter().any(|g| g == genre) {
                genres.push(genre.to_string());
            }
        }
        if genres.is_empty() {
            return Err(malformed(FILE, line_no, "empty genre list"));
        }
        let record = ItemRecord {
            item_id,
            title,
            year,
            genres,
        };
        if items.insert(item_id, record).is_some() {
            return Err(malformed(FILE, line_no, format!("duplicate item id {item_id}")));
        }
    }
    Ok(items)
}

/// Extracts the year from a trailing `(YYYY)` in the title.
fn parse_year(title: &str) -> Option<u16> {
    let trimmed = title.trim_end();
    let rest = trimmed.strip_suffix(')')?;
    let open = rest.rfind('(')?;
    let digits = &rest[open + 1..];
    if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn parse_ratings(text: &str) -> Result<Vec<RatingRow>, DatasetError> {
    const FILE: &str = "ratings.dat";
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_fields(FILE, line_no, line, 4)?;
        let rating: u8 = parse_num(FILE, line_no, fields[2], "rating")?;
        if !(1..=5).contains(&rating) {
            return Err(malformed(FILE, line_no, format!("rating {rating} outside 1..=5")));
        }
        let timestamp: i64 = parse_num(FILE, line_no, fields[3], "timestamp")?;
        if timestamp <= 0 {
            return Err(malformed(FILE, line_no, format!("non-positive timestamp {timestamp}")));
        }
        rows.push(RatingRow {
            user_id: parse_num(FILE, line_no, fields[0], "user id")?,
            item_id: parse_num(FILE, line_no, fields[1], "item id")?,
            rating,
            timestamp,
        });
    }
    Ok(rows)
}
