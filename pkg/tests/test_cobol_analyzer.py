import re

import pytest

from bsgkit.analyzer import analyze, discover_constraints, extract_rules, execution_events, sentinel_fields
from bsgkit.cobol import CAnd, CNot, CRel, If, LegacyParseError, Move, extract_structure, parse_legacy

from conftest import SCENARIO_IDS, bundled, pipeline_parts

HEADER = """       IDENTIFICATION DIVISION.
       PROGRAM-ID. DEMO.
       DATA DIVISION.
       WORKING-STORAGE SECTION.
"""


def program(data: str, procedure: str) -> str:
    return HEADER + data + "       PROCEDURE DIVISION.\n" + procedure


ORDERS = program(
    """       01 ORDER-ID PIC 9(5).
       01 ACCOUNT-STATUS PIC X(10).
          88 VALID-STATUS VALUE 'ACTIVE' 'SUSPENDED'.
       01 ORDER-TYPE PIC X(10).
       01 A PIC 9(3).
       01 B PIC 9(3).
       01 TOTAL PIC 9(5).
       01 WS-STATUS PIC X(10).
       01 WS-REASON PIC X(20).
       01 DISCOUNT PIC 9(3).
""",
    """       MAIN.
           PERFORM INIT
           PERFORM VALIDATE
           PERFORM CALC
           CALL 'BILLSVC'
           STOP RUN.
       INIT.
           MOVE 0 TO DISCOUNT.
       VALIDATE.
           IF ACCOUNT-STATUS = 'SUSPENDED' AND ORDER-TYPE NOT = 'DISCONNECT'
              MOVE 'SUSPENDED' TO WS-REASON
              PERFORM REJECT-ORDER
           END-IF
           IF ORDER-ID = 0 OR NOT VALID-STATUS
              PERFORM REJECT-ORDER
           END-IF.
       CALC.
           COMPUTE TOTAL = A + B - DISCOUNT.
       REJECT-ORDER.
           MOVE 'REJECTED' TO WS-STATUS
           GOBACK.
""")


@pytest.fixture(scope="module")
def orders():
    ast = parse_legacy(ORDERS, "orders.cob")
    return ast, extract_structure(ast)


class TestParse:
    def test_minimal_program(self):
        ast = parse_legacy(program("       01 X PIC 9.\n", "       ONLY.\n           MOVE 1 TO X.\n"), "m.cob")
        assert len(ast.paragraphs) == 1
        assert len(ast.paragraphs[0].statements) == 1
        assert isinstance(ast.paragraphs[0].statements[0], Move)
        assert ast.program_id == "DEMO"

    def test_compound_exemption_condition(self, orders):
        ast, _ = orders
        st = ast.paragraph("VALIDATE").statements[0]
        assert isinstance(st, If)
        assert isinstance(st.condition, CAnd)
        assert isinstance(st.condition.left, CRel)
        assert isinstance(st.condition.right, CNot)
        assert st.line == 25

    def test_missing_procedure_division_is_fatal(self):
        with pytest.raises(LegacyParseError) as err:
            parse_legacy(HEADER, "x.cob")
        assert err.value.line >= 1

    def test_unsupported_statement_salvages_to_next_paragraph(self):
        ast = parse_legacy(program("       01 A PIC 9(3).\n       01 WS-STATUS PIC X(10).\n", """       FIRST-PARA.
           MOVE 1 TO A.
       BROKEN.
           OPEN INPUT SOMEFILE.
       LAST-PARA.
           MOVE 2 TO A.
"""), "s.cob")
        assert [p.name for p in ast.paragraphs] == ["FIRST-PARA", "BROKEN", "LAST-PARA"]
        assert [p.salvaged for p in ast.paragraphs] == [False, True, False]
        assert len(ast.issues) == 1
        issue = ast.issues[0]
        assert (issue.line, issue.paragraph) == (11, "BROKEN")
        assert "OPEN" in issue.message

    def test_fixed_format_sequence_area_ignored(self):
        text = ORDERS.replace("       MAIN.", "000100 MAIN.")
        assert [p.name for p in parse_legacy(text, "o.cob").paragraphs] == \
            [p.name for p in parse_legacy(ORDERS, "o.cob").paragraphs]


class TestStructure:
    def test_entry_edges_and_externals(self, orders):
        _, s = orders
        assert s.entry_points == ("MAIN",)
        assert ("MAIN", "VALIDATE", "perform") in {(e.src, e.dst, e.kind) for e in s.call_graph}
        assert s.external_deps == ("BILLSVC",)

    def test_single_perform(self):
        s = extract_structure(parse_legacy(program("", """       MAIN.
           PERFORM VALIDATE.
       VALIDATE.
           DISPLAY 'OK'.
"""), "p.cob"))
        assert s.entry_points == ("MAIN",)
        assert [(e.src, e.dst) for e in s.call_graph] == [("MAIN", "VALIDATE")]

    def test_disconnected_paragraphs_are_both_entries(self):
        s = extract_structure(parse_legacy(program("", """       ONE.
           DISPLAY 'A'.
       TWO.
           DISPLAY 'B'.
"""), "p.cob"))
        assert s.entry_points == ("ONE", "TWO")
        assert s.call_graph == ()

    def test_graph_nodes_are_known(self, orders):
        _, s = orders
        known = set(s.paragraphs) | set(s.external_deps)
        assert all(e.src in known and e.dst in known for e in s.call_graph)


@pytest.fixture(scope="module")
def rules(orders):
    ast, s = orders
    return extract_rules(ast, s)


class TestRules:
    def test_reject_guard_is_explicit_high(self, rules):
        r = next(r for r in rules if "order_id == 0" in r.description)
        assert (r.kind, r.category, r.confidence) == ("validation", "explicit", "high")

    def test_default_is_implicit_medium(self, rules):
        r = next(r for r in rules if r.description.startswith("Default discount"))
        assert (r.category, r.confidence, r.output_effects) == ("implicit", "medium", ("discount",))

    def test_default_dominates_first_read(self, orders):
        # independent dataflow check: the first event on DISCOUNT along the execution order is the write
        ast, s = orders
        events = [(op, name) for op, name, _ in execution_events(ast, s, {}).items if name == "DISCOUNT"]
        assert events[0] == ("w", "DISCOUNT")
        assert ("r", "DISCOUNT") in events[1:]

    def test_compute_inputs_and_outputs(self, rules):
        r = next(r for r in rules if r.description.startswith("Compute total"))
        assert r.kind == "computation"
        assert set(r.input_fields) == {"a", "b", "discount"}
        assert r.output_effects == ("total",)

    def test_plain_compute_example(self):
        ast = parse_legacy(program("       01 A PIC 9.\n       01 B PIC 9.\n       01 TOTAL PIC 99.\n",
                                   "       CALC.\n           COMPUTE TOTAL = A + B.\n"), "c.cob")
        [r] = extract_rules(ast)
        assert (set(r.input_fields), r.output_effects) == ({"a", "b"}, ("total",))

    def test_exemption_names_the_value(self, rules):
        r = next(r for r in rules if r.description.startswith("Exemption"))
        assert (r.category, r.confidence) == ("implicit", "medium")
        assert "'DISCONNECT'" in r.description

    def test_ids_follow_document_order(self, rules):
        assert [r.id for r in rules] == [f"BR-{i:03d}" for i in range(1, len(rules) + 1)]
        lines = [(r.location.file, r.location.line_start) for r in rules]
        assert lines == sorted(lines)

    def test_deterministic(self, orders):
        ast, s = orders
        assert extract_rules(ast, s) == extract_rules(parse_legacy(ORDERS, "orders.cob"), s)

    def test_sentinel_fields_not_rules(self, orders, rules):
        ast, _ = orders
        assert "WS-STATUS" in sentinel_fields(ast)
        assert not any("ws_status" in r.output_effects for r in rules)


class TestConstraints:
    SUM = program("""       01 ORDER-ID PIC 9(5).
       01 ORDER-TOTAL PIC 9(7)V99.
       01 LINE-ITEMS PIC 9(5)V99 OCCURS 10.
       01 WS-STATUS PIC X(10).
""", """       CHECK-TOTAL.
           IF ORDER-ID = 0
              PERFORM REJECT-ORDER
           END-IF
           IF ORDER-TOTAL NOT = FUNCTION SUM(LINE-ITEMS(ALL))
              PERFORM REJECT-ORDER
           END-IF.
       REJECT-ORDER.
           MOVE 'REJECTED' TO WS-STATUS.
""")

    @pytest.fixture
    def found(self):
        return discover_constraints(parse_legacy(self.SUM, "t.cob"))

    def test_pic_integer_width(self, found):
        r = next(r for r in found if r.input_fields == ("order_id",))
        spec = r.constraint_payload
        assert (spec.kind, spec.width) == ("type_restriction", 5)
        assert "integer" in r.description

    def test_sum_pattern_becomes_invariant(self, found):
        [r] = [r for r in found if r.constraint_payload.kind == "business_invariant"]
        assert r.constraint_payload.expression == "order_total == sum(line_items)"
        assert r.category == "implicit"

    def test_level_88_enum(self, orders):
        ast, _ = orders
        r = next(r for r in discover_constraints(ast) if r.constraint_payload.kind == "value_range")
        assert r.constraint_payload.subject_fields == ("account_status",)
        assert r.constraint_payload.values == ("ACTIVE", "SUSPENDED")

    def test_ddl_check_between(self, orders):
        ast, _ = orders
        ddl = "CREATE TABLE T (AMOUNT DECIMAL(5,2) CHECK (AMOUNT BETWEEN 1 AND 100));"
        r = next(r for r in discover_constraints(ast, [("t.ddl", ddl)]) if r.location.file == "t.ddl")
        spec = r.constraint_payload
        assert (spec.kind, spec.lower, spec.upper) == ("value_range", 1, 100)

    def test_foreign_key(self, orders):
        ast, _ = orders
        ddl = "CREATE TABLE O (CUST_ID INTEGER,\n  FOREIGN KEY (CUST_ID) REFERENCES CUSTOMERS(ID));"
        [r] = [r for r in discover_constraints(ast, [("o.ddl", ddl)]) if r.location.file == "o.ddl"]
        assert r.constraint_payload.kind == "referential_integrity"
        assert r.location.line_start == 2

    def test_bad_check_is_recoverable(self, orders):
        ast, _ = orders
        issues = []
        ddl = "CREATE TABLE O (X INTEGER CHECK (X BETWEEN 1 AND);\nCREATE TABLE P (Y INTEGER CHECK (Y >= 0));"
        found = [r for r in discover_constraints(ast, [("o.ddl", ddl)], issues) if r.location.file == "o.ddl"]
        assert len(issues) == 1 and issues[0].line == 1
        assert [r.constraint_payload.lower for r in found] == [0]


KEYWORDS = re.compile(r"\b(IF|COMPUTE|EVALUATE|MOVE|PIC|PERFORM|CHECK|FOREIGN|WHEN|VALUE)\b")


@pytest.mark.parametrize("scenario_id", SCENARIO_IDS)
def test_bundled_locations_contain_trigger_keyword(scenario_id):
    bundle, analysis, _ = pipeline_parts(scenario_id)
    texts = {f.path: f.text.splitlines() for f in bundle.files}
    for r in analysis.inventory.rules:
        loc = r.location
        span = "\n".join(texts[loc.file][loc.line_start - 1:loc.line_end])
        assert KEYWORDS.search(span.upper()), (r.id, r.description, span)


@pytest.mark.parametrize("scenario_id", SCENARIO_IDS)
def test_bundled_analysis_is_deterministic(scenario_id):
    bundle, analysis, _ = pipeline_parts(scenario_id)
    again = analyze(bundle)
    assert again.inventory == analysis.inventory
    assert again.inventory.rules == analysis.inventory.rules


def test_bundled_recall_floor():
    from bsgkit.bsg import rule_coverage
    from bsgkit.evalkit import attach_gold
    for scenario in bundled():
        _, analysis, bsg = pipeline_parts(scenario.id)
        gold = scenario.gold_rules()
        cov = rule_coverage(bsg, gold, attach_gold(analysis.inventory, gold, bsg))
        assert cov.recall >= scenario.recall_floor


def test_grammar_file_lists_exactly_the_supported_statements():
    import re
    from importlib import resources
    from bsgkit.cobol import VERBS, _ProcParser
    text = resources.files("bsgkit").joinpath("data", "grammar", "mini-cobol.ebnf").read_text()
    production = re.search(r"^statement\s*=(.*?);", text, re.S | re.M).group(1)
    listed = {w.replace("-", "_") for w in re.findall(r"[a-z-]+", production)}
    handled = {v.lower().replace("-", "_") for v in VERBS if hasattr(_ProcParser, "st_" + v.lower().replace("-", "_"))}
    assert listed == handled
