from decimal import Decimal

import pytest

from bsgkit import docio
from bsgkit.artifacts import (BundleError, BusinessRule, BusinessRuleInventory, ConstraintSpec, InventoryError,
                              LegacyArtifactBundle, ArtifactFile, PipelineState, SourceLocation, Status,
                              bundle_digest, check_locations, load_bundle)
from bsgkit.docio import DocumentError

COBOL = "       IDENTIFICATION DIVISION.\n       PROGRAM-ID. T.\n       PROCEDURE DIVISION.\n       P.\n           MOVE 1 TO X.\n"


@pytest.fixture
def bundle_dir(tmp_path):
    (tmp_path / "order_validation.cob").write_text(COBOL)
    (tmp_path / "schema.ddl").write_text("CREATE TABLE T (X INTEGER);\n")
    return tmp_path


class TestLoadBundle:
    def test_source_and_schema(self, bundle_dir):
        b = load_bundle(bundle_dir)
        assert [f.kind for f in b.source_files] == ["source"]
        assert [f.path for f in b.schemas] == ["schema.ddl"]

    def test_only_notes_is_empty_source_set(self, tmp_path):
        (tmp_path / "notes.md").write_text("# notes\n")
        with pytest.raises(BundleError) as err:
            load_bundle(tmp_path)
        assert err.value.code == "EMPTY_SOURCE_SET"

    def test_digest_stable_across_loads(self, bundle_dir):
        assert bundle_digest(load_bundle(bundle_dir)) == bundle_digest(load_bundle(bundle_dir))

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(BundleError) as err:
            load_bundle(tmp_path / "nope")
        assert err.value.code == "NOT_A_DIRECTORY"

    def test_manifest_overrides_extensions(self, tmp_path):
        (tmp_path / "prog.src").write_text(COBOL)
        (tmp_path / "MANIFEST").write_text("# kinds\nsource prog.src\n")
        b = load_bundle(tmp_path, tmp_path / "MANIFEST")
        assert [(f.path, f.kind) for f in b.files] == [("prog.src", "source")]

    @pytest.mark.parametrize("text,code", [("weird prog.src\n", "UNKNOWN_KIND"), ("source\n", "BAD_MANIFEST"),
                                           ("source a\nsource a\n", "DUPLICATE_PATH")])
    def test_bad_manifest(self, tmp_path, text, code):
        (tmp_path / "MANIFEST").write_text(text)
        with pytest.raises(BundleError) as err:
            load_bundle(tmp_path, tmp_path / "MANIFEST")
        assert err.value.code == code


class TestDigest:
    def _bundle(self, files):
        return LegacyArtifactBundle(tuple(ArtifactFile(p, k, t) for p, k, t in files))

    def test_deterministic(self):
        b = self._bundle([("a.cob", "source", COBOL)])
        assert bundle_digest(b) == bundle_digest(b)

    def test_one_byte_changes_digest(self):
        a = self._bundle([("a.cob", "source", COBOL)])
        b = self._bundle([("a.cob", "source", COBOL.replace("1", "2"))])
        assert bundle_digest(a) != bundle_digest(b)

    def test_order_independent(self):
        files = [("a.cob", "source", COBOL), ("b.ddl", "schema", "CREATE TABLE B (X INT);")]
        assert bundle_digest(self._bundle(files)) == bundle_digest(self._bundle(files[::-1]))

    def test_path_boundaries_matter(self):
        a = self._bundle([("a.cob", "source", "xy"), ("b.cob", "source", "z")])
        b = self._bundle([("a.cob", "source", "x"), ("b.cob", "source", "yz")])
        assert bundle_digest(a) != bundle_digest(b)


def _rule(i=1, **kw):
    base = dict(id=f"BR-{i:03d}", description="d", location=SourceLocation("a.cob", 1, 2), input_fields=("x",),
                output_effects=(), confidence="high", category="explicit", kind="validation")
    base.update(kw)
    return BusinessRule(**base)


class TestInventory:
    def test_round_trip(self):
        payload = ConstraintSpec("value_range", ("x",), "x >= 1 and x <= 100", 1, 100)
        inv = BusinessRuleInventory((_rule(1), _rule(2, kind="constraint", constraint_payload=payload)), "abc",
                                    {"backend": "deterministic"})
        again = BusinessRuleInventory.from_doc(docio.loads(docio.dumps(inv.to_doc())))
        assert again == inv

    def test_duplicate_ids(self):
        with pytest.raises(InventoryError):
            BusinessRuleInventory((_rule(1), _rule(1)), "abc")

    @pytest.mark.parametrize("kw", [{"id": "R1"}, {"confidence": "certain"}, {"category": "tacit"},
                                    {"kind": "constraint"}])
    def test_rule_validation(self, kw):
        with pytest.raises(ValueError):
            _rule(**kw)

    def test_missing_field_names_path(self):
        doc = {"rules": [{"id": "BR-001"}], "bundle_digest": "x"}
        with pytest.raises(DocumentError) as err:
            BusinessRuleInventory.from_doc(doc)
        assert ".rules[0]" in err.value.path

    def test_check_locations(self):
        bundle = LegacyArtifactBundle((ArtifactFile("a.cob", "source", COBOL),))
        inv = BusinessRuleInventory((_rule(1), _rule(2, location=SourceLocation("a.cob", 4, 40))), "x")
        problems = check_locations(inv, bundle)
        assert len(problems) == 1 and problems[0].startswith("BR-002")


class TestSourceLocation:
    def test_parse_and_overlap(self):
        a = SourceLocation.parse("X.cob:118-142")
        assert (a.file, a.line_start, a.line_end) == ("X.cob", 118, 142)
        assert a.overlaps(SourceLocation.parse("X.cob:142"))
        assert not a.overlaps(SourceLocation.parse("X.cob:143-150"))
        assert not a.overlaps(SourceLocation.parse("Y.cob:120"))

    def test_bad_range(self):
        with pytest.raises(ValueError):
            SourceLocation("a", 5, 4)


class TestPipelineState:
    def _state(self):
        return PipelineState(LegacyArtifactBundle((ArtifactFile("a.cob", "source", COBOL),)))

    def test_write_order_enforced(self):
        s = self._state()
        with pytest.raises(RuntimeError):
            s.put("bsg", object())
        with pytest.raises(RuntimeError):
            s.put("equiv_report", object())

    def test_iteration_bound(self):
        s = self._state()
        for _ in range(3):
            s.advance()
        with pytest.raises(RuntimeError):
            s.advance()

    def test_terminal_states_frozen(self):
        s = self._state()
        s.fail("analyze", "boom")
        assert s.status is Status.FAILED and s.failure == {"stage": "analyze", "message": "boom"}
        with pytest.raises(RuntimeError):
            s.complete()
        with pytest.raises(RuntimeError):
            s.put("business_rules", None)


class TestDocio:
    def test_canonical_form(self):
        text = docio.dumps({"b": 1, "a": [Decimal("1.5"), "é"]})
        assert text == '{\n  "a": [\n    1.5,\n    "é"\n  ],\n  "b": 1\n}\n'

    def test_decimal_round_trip(self):
        assert docio.loads(docio.dumps({"x": Decimal("0.1")})) == {"x": Decimal("0.1")}

    def test_wire_line_is_compact(self):
        assert docio.dumps_line({"b": 1, "a": "x"}) == '{"a":"x","b":1}'

    def test_require_reports_path(self):
        with pytest.raises(DocumentError) as err:
            docio.require({"a": 1}, "b", ".root")
        assert err.value.path == ".root.b"
        with pytest.raises(DocumentError):
            docio.require({"a": 1}, "a", "", str)
