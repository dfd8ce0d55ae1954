//! A miniature development set in the on-disk layout the loaders expect.
//! Used by tests and the `demo` subcommand of the command-line tool.

use std::io;
use std::path::Path;

use rusqlite::Connection;
use serde_json::json;

use crate::llm::{Role, ScenarioRecord, ScriptedBackend};
use crate::search::IterationsMode;

const CALIFORNIA_SCHOOLS: &str = "
CREATE TABLE frpm (CDSCode TEXT PRIMARY KEY, ChartedSchool TEXT);
CREATE TABLE schools (CDSCode TEXT REFERENCES frpm(CDSCode));
INSERT INTO frpm VALUES ('01100170109835', 'Y'), ('01100170112607', 'N'), ('01100170118489', 'Y');
INSERT INTO schools VALUES ('01100170109835'), ('01100170112607');
";

const CONCERT_HALL: &str = "
CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER);
CREATE TABLE concert (
    concert_id INTEGER PRIMARY KEY,
    singer_id INTEGER REFERENCES singer(singer_id),
    year INTEGER,
    attendance REAL
);
INSERT INTO singer VALUES
    (1, 'Joe Sharp', 'Netherlands', 52),
    (2, 'Timbaland', 'United States', 32),
    (3, 'Justin Brown', 'France', 29),
    (4, 'Rose White', 'France', 41),
    (5, 'John Nizinik', 'France', 43);
INSERT INTO concert VALUES
    (1, 2, 2014, 1520.5),
    (2, 2, 2015, 980.0),
    (3, 3, 2014, 2210.25),
    (4, 5, 2015, 410.0),
    (5, 1, 2013, 1320.0);
";

fn create_db(root: &Path, db_id: &str, ddl: &str) -> io::Result<()> {
    let dir = root.join("dev_databases").join(db_id);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{db_id}.sqlite"));
    if path.exists() {
        std::fs::remove_file(&path)?;
    }
    let conn = Connection::open(&path).map_err(io::Error::other)?;
    conn.execute_batch(ddl).map_err(io::Error::other)?;
    Ok(())
}

/// Writes `dev.json` and two small databases under `root`.
pub fn write_demo_dataset(root: &Path) -> io::Result<()> {
    create_db(root, "california_schools", CALIFORNIA_SCHOOLS)?;
    create_db(root, "concert_hall", CONCERT_HALL)?;
    let tasks = json!([
        {
            "question_id": 0,
            "db_id": "california_schools",
            "question": "How many chartered schools are listed?",
            "evidence": "chartered school refers to ChartedSchool = 'Y'",
            "SQL": "SELECT COUNT(*) FROM frpm WHERE ChartedSchool = 'Y'",
            "difficulty": "simple"
        },
        {
            "question_id": 1,
            "db_id": "california_schools",
            "question": "List the codes of chartered schools that also appear in the schools table.",
            "evidence": "chartered school refers to ChartedSchool = 'Y'",
            "SQL": "SELECT T1.CDSCode FROM frpm AS T1 INNER JOIN schools AS T2 ON T1.CDSCode = T2.CDSCode WHERE T1.ChartedSchool = 'Y'",
            "difficulty": "moderate"
        },
        {
            "question_id": 2,
            "db_id": "concert_hall",
            "question": "What are the names of singers from France?",
            "evidence": "",
            "SQL": "SELECT name FROM singer WHERE country = 'France'",
            "difficulty": "simple"
        },
        {
            "question_id": 3,
            "db_id": "concert_hall",
            "question": "What is the average attendance of concerts held in 2014?",
            "evidence": "",
            "SQL": "SELECT AVG(attendance) FROM concert WHERE year = 2014",
            "difficulty": "moderate"
        },
        {
            "question_id": 4,
            "db_id": "concert_hall",
            "question": "Which singer performed the concert with the highest attendance, and in which year?",
            "evidence": "highest attendance refers to MAX(attendance)",
            "SQL": "SELECT T2.name, T1.year FROM concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id ORDER BY T1.attendance DESC LIMIT 1",
            "difficulty": "challenging"
        }
    ]);
    std::fs::write(
        root.join("dev.json"),
        serde_json::to_string_pretty(&tasks).map_err(io::Error::other)?,
    )
}

/// A scripted backend script for one demo task.
#[derive(Debug, Clone)]
pub struct ScriptedScenario {
    pub name: &'static str,
    pub question_id: i64,
    pub iterations_mode: IterationsMode,
    pub records: Vec<ScenarioRecord>,
}

impl ScriptedScenario {
    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::from_records(self.records.clone())
    }
}

fn critique(score: f64, assessment: &str) -> String {
    format!("score: {score}\nconfidence: 0.9\nmutation_temperature: 0.2\nassessment: {assessment}")
}

fn fenced(sql: &str) -> String {
    format!("```sql\n{sql}\n```")
}

fn on_sql(role: Role, sql: &str, response: String) -> ScenarioRecord {
    ScenarioRecord::containing(role, fenced(sql), response)
}

const SINGER_SUBSETS: [&str; 3] = [
    "singer.name\nsinger.country",
    "singer.name, singer.age",
    "singer.name\nsinger.country\nsinger.age",
];

fn subsets(lines: &[&str]) -> Vec<ScenarioRecord> {
    lines
        .iter()
        .map(|l| ScenarioRecord::any(Role::SchemaSubset, *l))
        .collect()
}

/// Scripted scenarios over the demo dataset, each exercising a different
/// way a refinement chain can end.
pub fn scripted_scenarios() -> Vec<ScriptedScenario> {
    let france = "SELECT name FROM singer WHERE country = 'France'";
    let all = "SELECT name FROM singer";
    let over_30 = "SELECT name FROM singer WHERE age > 30";
    let over_40 = "SELECT name FROM singer WHERE age > 40";
    let over_50 = "SELECT name FROM singer WHERE age > 50";
    let over_60 = "SELECT name FROM singer WHERE age > 60";

    let mut out = Vec::new();

    let mut records = vec![ScenarioRecord::any(Role::Difficulty, "1")];
    records.extend(subsets(&SINGER_SUBSETS[..2]));
    records.push(ScenarioRecord::any(Role::GenQuery, fenced(france)));
    records.push(on_sql(Role::Critic, france, critique(0.9, "")));
    out.push(ScriptedScenario {
        name: "accepted_first_try",
        question_id: 2,
        iterations_mode: IterationsMode::Prose,
        records,
    });

    let mut records = vec![ScenarioRecord::any(Role::Difficulty, "Difficulty: 4")];
    records.extend(subsets(&SINGER_SUBSETS));
    records.push(ScenarioRecord::any(Role::GenQuery, fenced(all)));
    for (from, to) in [
        (all, over_30),
        (over_30, over_40),
        (over_40, over_50),
        (over_50, over_60),
    ] {
        records.push(on_sql(Role::Critic, from, critique(0.4, "narrow the filter")));
        records.push(on_sql(Role::Mutate, from, fenced(to)));
    }
    records.push(on_sql(Role::Critic, over_60, critique(0.1, "narrow the filter")));
    out.push(ScriptedScenario {
        name: "refined_to_depth_limit",
        question_id: 2,
        iterations_mode: IterationsMode::Prose,
        records,
    });

    let mut records = vec![ScenarioRecord::any(Role::Difficulty, "2")];
    records.extend(subsets(&SINGER_SUBSETS));
    records.push(ScenarioRecord::containing(
        Role::GenQuery,
        "`singer`.`age`",
        fenced("SELECT name FROM singer WHERE nationality = 'France'"),
    ));
    records.push(ScenarioRecord::any(Role::GenQuery, fenced(france)));
    records.push(on_sql(Role::Critic, france, critique(0.8, "")));
    out.push(ScriptedScenario {
        name: "execution_errors_dropped",
        question_id: 2,
        iterations_mode: IterationsMode::Prose,
        records,
    });

    let mut records = vec![ScenarioRecord::any(Role::Difficulty, "2")];
    records.extend(subsets(&SINGER_SUBSETS));
    records.push(ScenarioRecord::any(Role::GenQuery, fenced(all)));
    records.push(on_sql(Role::Critic, all, critique(0.5, "keep only French singers")));
    records.push(on_sql(Role::Mutate, all, fenced(france)));
    records.push(on_sql(Role::Critic, france, critique(1.0, "none")));
    out.push(ScriptedScenario {
        name: "alg1_iterations",
        question_id: 2,
        iterations_mode: IterationsMode::Alg1,
        records,
    });

    let mut records = vec![ScenarioRecord::any(Role::Difficulty, "quite hard")];
    records.extend(subsets(&["concert.year, concert.attendance", "concert.attendance"]));
    let avg = "SELECT AVG(attendance) FROM concert WHERE year = 2014";
    records.push(ScenarioRecord::any(Role::GenQuery, fenced(avg)));
    records.push(on_sql(Role::Critic, avg, critique(0.7, "round the result")));
    records.push(on_sql(Role::Mutate, avg, "DELETE FROM concert".to_string()));
    out.push(ScriptedScenario {
        name: "difficulty_fallback_and_bad_mutation",
        question_id: 3,
        iterations_mode: IterationsMode::Prose,
        records,
    });

    let mut records = vec![ScenarioRecord::any(Role::Difficulty, "5")];
    records.extend(subsets(&[
        "singer.name, singer.singer_id\nconcert.singer_id\nconcert.attendance",
        "concert.year",
    ]));
    let top = "SELECT T2.name, T1.year FROM concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id ORDER BY T1.attendance DESC LIMIT 1";
    let loose = "SELECT T2.name, T1.year FROM concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id";
    records.push(ScenarioRecord::containing(
        Role::GenQuery,
        "`concert`.`attendance`",
        fenced(top),
    ));
    records.push(ScenarioRecord::any(Role::GenQuery, fenced(loose)));
    records.push(on_sql(Role::Critic, top, critique(0.95, "")));
    records.push(on_sql(Role::Critic, loose, critique(0.3, "order by attendance")));
    records.push(on_sql(Role::Mutate, loose, fenced(top)));
    out.push(ScriptedScenario {
        name: "mixed_chains_vote",
        question_id: 4,
        iterations_mode: IterationsMode::Prose,
        records,
    });

    out
}
