use super::*;
use crate::db::Database;
use crate::embed::TrigramEmbedder;
use crate::index::build_index;
use crate::schema::ingest_schema;

struct Fixture {
    _dir: tempfile::TempDir,
    catalog: SchemaCatalog,
    index: ValueIndex,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.sqlite");
    let c = rusqlite::Connection::open(&path).unwrap();
    c.execute_batch(
        r#"CREATE TABLE "table"(ID INTEGER PRIMARY KEY, name TEXT, score REAL);
           INSERT INTO "table" VALUES (1,'JOHN',3.5),(2,'MARY',NULL),(3,'PETE',9.0);
           CREATE TABLE Patient(ID INTEGER PRIMARY KEY, SEX TEXT, "First Date" DATE, City TEXT NOT NULL);
           CREATE TABLE Laboratory(ID INTEGER REFERENCES Patient(ID), IGA INTEGER, Note TEXT);
           INSERT INTO Patient VALUES (1,'F','1991-02-03','Tokyo'),(2,'M','1989-01-01','Osaka');
           INSERT INTO Laboratory VALUES (1,100,'ok'),(2,600,'high');"#,
    )
    .unwrap();
    drop(c);
    let db = Database::new(&path);
    let catalog = ingest_schema(&db).unwrap();
    let index = build_index(&catalog, &db, &TrigramEmbedder).unwrap();
    Fixture {
        _dir: dir,
        catalog,
        index,
    }
}

fn ctx(f: &Fixture) -> AlignmentContext<'_> {
    AlignmentContext::new(&f.catalog).with_index(&f.index, &TrigramEmbedder)
}

fn aligned(f: &Fixture, sql: &str) -> String {
    align_all(sql, &ctx(f)).sql
}

fn same(a: &str, b: &str) {
    assert_eq!(normalize_sql_whitespace(a), normalize_sql_whitespace(b), "\n{a}\n{b}");
}

#[test]
fn agent_alignment_example() {
    let f = fixture();
    let out = align_all("SELECT ID FROM table WHERE table.name= 'John'", &ctx(&f));
    same(&out.sql, "SELECT ID FROM table WHERE table.name= 'JOHN'");
    assert!(matches!(&out.applied[..], [Rewrite::ValueLiteral { to, .. }] if to == "JOHN"));
}

#[test]
fn function_alignment_example() {
    let f = fixture();
    same(
        &aligned(&f, "SELECT ID FROM table ORDER BY MAX(score)"),
        "SELECT ID FROM table GROUP BY ID ORDER BY score",
    );
}

#[test]
fn style_alignment_example() {
    let f = fixture();
    same(
        &aligned(&f, "SELECT ID FROM table ORDER BY score DESC LIMIT 1"),
        "SELECT ID FROM table WHERE score IS NOT NULL ORDER BY score DESC LIMIT 1",
    );
}

#[test]
fn aligned_input_is_a_fixed_point() {
    let f = fixture();
    for sql in [
        "SELECT ID FROM table WHERE table.name= 'JOHN'",
        "SELECT ID FROM table GROUP BY ID ORDER BY score",
        "SELECT ID FROM table WHERE score IS NOT NULL ORDER BY score DESC LIMIT 1",
        "SELECT COUNT(DISTINCT T1.ID) FROM Patient AS T1 INNER JOIN Laboratory AS T2 ON T1.ID = T2.ID WHERE T2.IGA > 80 AND T2.IGA < 500 AND strftime('%Y', T1.`First Date`) >= '1990'",
    ] {
        let out = align_all(sql, &ctx(&f));
        assert_eq!(out.sql, sql);
        assert!(out.applied.is_empty());
    }
}

#[test]
fn garbage_is_returned_unchanged() {
    let f = fixture();
    let out = align_all("SELEC x", &ctx(&f));
    assert_eq!(out.sql, "SELEC x");
    assert!(matches!(out.flags[..], [AlignFlag::Unparseable { .. }]));
}

#[test]
fn unmatched_literal_is_flagged() {
    let f = fixture();
    let out = align_all("SELECT ID FROM table WHERE name = 'Zzyzx'", &ctx(&f));
    assert_eq!(out.sql, "SELECT ID FROM table WHERE name = 'Zzyzx'");
    assert!(matches!(&out.flags[..], [AlignFlag::UnresolvedValue { literal, .. }] if literal == "Zzyzx"));
}

#[test]
fn like_and_in_lists() {
    let f = fixture();
    assert_eq!(
        aligned(&f, "SELECT ID FROM Patient WHERE City LIKE '%tokyo%'"),
        "SELECT ID FROM Patient WHERE City LIKE '%tokyo%'"
    );
    same(
        &aligned(&f, "SELECT ID FROM Patient WHERE City LIKE 'Osakaa%'"),
        "SELECT ID FROM Patient WHERE City LIKE 'Osaka%'",
    );
    same(
        &aligned(&f, "SELECT T1.ID FROM Patient AS T1 WHERE T1.City IN ('tokyo', 'Osaka')"),
        "SELECT T1.ID FROM Patient AS T1 WHERE T1.City IN ('Tokyo', 'Osaka')",
    );
}

#[test]
fn value_hits_without_index() {
    let f = fixture();
    let hits = f
        .index
        .search_cells(&TrigramEmbedder, "tokyo", &Default::default(), false)
        .unwrap();
    let c = AlignmentContext::new(&f.catalog).with_hits(&hits);
    same(
        &align_all("SELECT ID FROM Patient WHERE City = 'TOKYO'", &c).sql,
        "SELECT ID FROM Patient WHERE City = 'Tokyo'",
    );
}

#[test]
fn numeric_columns_are_left_alone() {
    let f = fixture();
    let sql = "SELECT ID FROM Laboratory WHERE IGA = '100'";
    assert_eq!(aligned(&f, sql), sql);
}

#[test]
fn column_remap() {
    let f = fixture();
    let out = align_all(
        "SELECT T1.first_date FROM Patient AS T1 WHERE T1.Sex = 'F'",
        &ctx(&f),
    );
    same(&out.sql, "SELECT T1.`First Date` FROM Patient AS T1 WHERE T1.Sex = 'F'");
    let out = align_all("SELECT Nothing FROM Patient", &ctx(&f));
    assert_eq!(out.sql, "SELECT Nothing FROM Patient");
    assert!(matches!(&out.flags[..], [AlignFlag::UnknownColumn { .. }]));
    // Select aliases are not columns.
    let sql = "SELECT COUNT(ID) AS n FROM Patient GROUP BY SEX ORDER BY n";
    assert!(align_all(sql, &ctx(&f)).flags.is_empty());
}

#[test]
fn nested_aggregate_and_unused_join() {
    let f = fixture();
    let plain = ctx(&f).with_style(StyleProfile::off());
    same(
        &align_all("SELECT MAX(COUNT(IGA)) FROM Laboratory", &plain).sql,
        "SELECT MAX(IGA) FROM Laboratory",
    );
    same(
        &aligned(&f, "SELECT T1.SEX FROM Patient AS T1 INNER JOIN Laboratory AS T2 ON T1.ID = T2.ID"),
        "SELECT T1.SEX FROM Patient AS T1",
    );
    let keep = "SELECT T1.SEX FROM Patient AS T1 INNER JOIN Laboratory AS T2 ON T1.ID = T2.ID WHERE T2.IGA > 1";
    assert_eq!(aligned(&f, keep), keep);
    let star = "SELECT * FROM Patient AS T1 INNER JOIN Laboratory AS T2 ON T1.ID = T2.ID";
    assert_eq!(aligned(&f, star), star);
}

#[test]
fn limit_over_max_and_guard() {
    let f = fixture();
    same(
        &aligned(&f, "SELECT MAX(score) FROM table"),
        "SELECT score FROM table WHERE score IS NOT NULL ORDER BY score DESC LIMIT 1",
    );
    let c = ctx(&f).with_style(StyleProfile::off());
    let sql = "SELECT MAX(score) FROM table";
    assert_eq!(align_all(sql, &c).sql, sql);
    let sql = "SELECT ID FROM table ORDER BY score DESC LIMIT 1";
    assert_eq!(align_all(sql, &c).sql, sql);
}

#[test]
fn guard_respects_constraints_and_disjunctions() {
    let f = fixture();
    let sql = "SELECT ID FROM Patient ORDER BY City LIMIT 1";
    assert_eq!(aligned(&f, sql), sql);
    let sql = "SELECT ID FROM Patient ORDER BY ID DESC LIMIT 1";
    assert_eq!(aligned(&f, sql), sql);
    same(
        &aligned(&f, "SELECT ID FROM Patient WHERE SEX = 'F' OR SEX = 'M' ORDER BY `First Date` LIMIT 2"),
        "SELECT ID FROM Patient WHERE `First Date` IS NOT NULL AND (SEX = 'F' OR SEX = 'M') ORDER BY `First Date` LIMIT 2",
    );
}

#[test]
fn idempotent_on_rewritten_output() {
    let f = fixture();
    for sql in [
        "SELECT ID FROM table WHERE table.name= 'John'",
        "SELECT ID FROM table ORDER BY MAX(score)",
        "SELECT MIN(score) FROM table WHERE name = 'mary' OR name = 'pete'",
        "SELECT T1.first_date FROM Patient AS T1 INNER JOIN Laboratory AS T2 ON T1.ID = T2.ID ORDER BY T1.first_date LIMIT 3",
    ] {
        let once = aligned(&f, sql);
        assert_eq!(aligned(&f, &once), once, "from {sql}");
    }
}

#[test]
fn assist_requires_parseable_reply() {
    use crate::llm::{ScriptedGateway, TranscriptRecord};
    let flags = vec![AlignFlag::UnknownColumn { name: "x".into() }];
    let good = ScriptedGateway::new(
        vec![TranscriptRecord::contains(Stage::AlignAssist, "SELECT x", "#SQL: SELECT ID FROM t")],
        true,
    );
    let cfg = LlmConfig::default();
    assert_eq!(
        assist_flagged("SELECT x FROM t", &flags, "", &good, &cfg).as_deref(),
        Some("SELECT ID FROM t")
    );
    assert_eq!(assist_flagged("SELECT x FROM t", &[], "", &good, &cfg), None);
    let bad = ScriptedGateway::new(
        vec![TranscriptRecord::contains(Stage::AlignAssist, "SELECT x", "#SQL: SELEC")],
        true,
    );
    assert_eq!(assist_flagged("SELECT x FROM t", &flags, "", &bad, &cfg), None);
}
