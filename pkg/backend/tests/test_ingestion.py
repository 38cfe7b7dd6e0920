"""
Dataset ingestion: parsing, skip report, cold-start filter, rating matrix.
"""

import numpy as np
import pytest

from app.exceptions import DatasetValidationError, EmptyDatasetError
from app.models.schemas import SIZE_VARIES
from app.services.ingestion import ingestion_service

from tests.conftest import make_app, make_rating


def test_load_two_apps_three_ratings(write_dataset):
    apps = [make_app("a1"), make_app("a2", interactive_elements=("Shares Location", "Users Interact"))]
    ratings = [make_rating("u1", "a1", 0.2), make_rating("u1", "a2", 1.0), make_rating("u2", "a1", 0.6)]
    apps_path, ratings_path = write_dataset(apps, ratings)

    dataset = ingestion_service.load_dataset(apps_path, ratings_path)

    assert len(dataset.apps) == 2
    assert len(dataset.ratings) == 3
    assert dataset.skipped == []
    assert dataset.apps[1].interactive_elements == ("Shares Location", "Users Interact")


def test_round_trip_reparses_identical_records(write_dataset, tmp_path):
    apps = [
        make_app("a1", readme_text='Quotes "inside", commas, and\na newline'),
        make_app("a2", size_bytes=SIZE_VARIES, has_ads=False, is_free=False),
    ]
    ratings = [make_rating("u1", "a1", 0.4), make_rating("u2", "a2", 0.8)]
    apps_path, ratings_path = write_dataset(apps, ratings)
    first = ingestion_service.load_dataset(apps_path, ratings_path)

    apps2, ratings2 = write_dataset(first.apps, first.ratings, name="again")
    second = ingestion_service.load_dataset(apps2, ratings2)

    assert second.apps == first.apps
    assert second.ratings == first.ratings


def test_invalid_grade_names_file_line_and_field(write_dataset, tmp_path):
    apps_path, _ = write_dataset([make_app("a1")], [])
    ratings_path = tmp_path / "bad_ratings.csv"
    ratings_path.write_text("user_id,app_id,rating\nu1,a1,1.0\nu2,a1,0.3\n", encoding="utf-8")

    with pytest.raises(DatasetValidationError) as info:
        ingestion_service.load_dataset(apps_path, str(ratings_path))

    assert info.value.line == 3
    assert info.value.field == "rating"
    assert info.value.file == str(ratings_path)


def test_unknown_app_reference_is_skipped_not_fatal(write_dataset, tmp_path):
    apps_path, _ = write_dataset([make_app("a1")], [])
    ratings_path = tmp_path / "ratings.csv"
    ratings_path.write_text("user_id,app_id,rating\nu1,a1,1.0\nu1,x9,0.6\n", encoding="utf-8")

    dataset = ingestion_service.load_dataset(apps_path, str(ratings_path))

    assert len(dataset.ratings) == 1
    assert len(dataset.skipped) == 1
    assert dataset.skipped[0].reason == "unknown_app"


def test_duplicate_rating_last_wins(write_dataset, tmp_path):
    apps_path, _ = write_dataset([make_app("a1")], [])
    ratings_path = tmp_path / "ratings.csv"
    ratings_path.write_text("user_id,app_id,rating\nu1,a1,0.2\nu1,a1,0.8\n", encoding="utf-8")

    dataset = ingestion_service.load_dataset(apps_path, str(ratings_path))

    assert [r.rating for r in dataset.ratings] == [0.8]
    assert [s.reason for s in dataset.skipped] == ["duplicate_rating"]


def _grid(users, apps):
    return [make_rating(u, a) for u in users for a in apps]


def test_cold_start_removes_app_below_threshold():
    apps = [make_app("a1"), make_app("a2")]
    users = [f"u{i:02d}" for i in range(10)]
    ratings = [make_rating(u, "a1") for u in users] + [make_rating(u, "a2") for u in users[:9]]

    apps_out, ratings_out = ingestion_service.filter_cold_start(apps, ratings, min_user=1, min_app=10)

    assert [a.app_id for a in apps_out] == ["a1"]
    assert all(r.app_id == "a1" for r in ratings_out)


def test_cold_start_keeps_user_at_threshold():
    app_ids = [f"a{i:02d}" for i in range(10)]
    apps = [make_app(a) for a in app_ids]
    ratings = _grid(["u1"], app_ids)

    _, ratings_out = ingestion_service.filter_cold_start(apps, ratings, min_user=10, min_app=1)

    assert len(ratings_out) == 10


def test_cold_start_two_pass_chain_drops_user_with_enough_original_ratings():
    apps = [make_app(a) for a in ("p", "q", "r")]
    ratings = (
        _grid(["u1", "u2"], ["p", "q", "r"])
        + [make_rating("u3", "p"), make_rating("u3", "q")]
        + [make_rating("u4", "p"), make_rating("u4", "q")]
    )
    # r has 2 raters (u1, u2) → removed; u1 / u2 fall from 3 to 2 apps → removed with min_user 3
    apps_out, ratings_out = ingestion_service.filter_cold_start(
        apps + [make_app("s")], ratings + _grid(["u5", "u6", "u7"], ["p", "q", "s"]), min_user=3, min_app=3,
    )
    users = {r.user_id for r in ratings_out}
    assert "u1" not in users and "u2" not in users
    assert users == {"u5", "u6", "u7"}
    assert {a.app_id for a in apps_out} == {"p", "q", "s"}


def test_cold_start_empty_result_raises():
    with pytest.raises(EmptyDatasetError, match="dataset empty after cold-start filtering"):
        ingestion_service.filter_cold_start([make_app("a1")], [make_rating("u1", "a1")], 10, 10)


def test_build_rating_matrix_single_entry():
    matrix = ingestion_service.build_rating_matrix([make_rating("u1", "a1", 1.0)])
    assert matrix.shape == (1, 1)
    assert matrix.entries == {(0, 0): 1.0}


def test_build_rating_matrix_sorted_axes_and_dense_table():
    ratings = [
        make_rating("u3", "b", 0.2),
        make_rating("u1", "a", 1.0),
        make_rating("u2", "b", 0.6),
        make_rating("u1", "b", 0.4),
    ]
    matrix = ingestion_service.build_rating_matrix(ratings)

    assert matrix.users == ("u1", "u2", "u3")
    assert matrix.apps == ("a", "b")
    np.testing.assert_array_equal(matrix.dense(), [[1.0, 0.4], [0.0, 0.6], [0.0, 0.2]])
    assert matrix.sparsity == pytest.approx(4 / 6)


def test_build_rating_matrix_rejects_duplicates():
    with pytest.raises(ValueError):
        ingestion_service.build_rating_matrix([make_rating("u1", "a1"), make_rating("u1", "a1", 0.2)])


def test_second_pass_no_change_on_stable_result():
    apps = [make_app(a) for a in ("p", "q", "r")]
    ratings = _grid(["u1", "u2", "u3"], ["p", "q"]) + [make_rating("u1", "r"), make_rating("u2", "r"), make_rating("u3", "r")]
    apps1, ratings1 = ingestion_service.filter_cold_start(apps, ratings, min_user=3, min_app=3)
    assert ingestion_service.second_pass_would_change(apps1, ratings1, 3, 3) is False


def test_second_pass_change_is_reported():
    apps = [make_app(a) for a in ("p", "q", "r")]
    ratings = [
        make_rating("u1", "p"), make_rating("u1", "q"),
        make_rating("u2", "p"),
        make_rating("u3", "q"), make_rating("u3", "r"),
    ]
    apps1, ratings1 = ingestion_service.filter_cold_start(apps, ratings, min_user=2, min_app=2)

    assert [(r.user_id, r.app_id) for r in ratings1] == [("u1", "p"), ("u1", "q")]
    assert ingestion_service.second_pass_would_change(apps1, ratings1, 2, 2) is True


def test_line_numbers_count_newlines_inside_quoted_readme(write_dataset):
    apps = [make_app("a1", readme_text="line one\nline two\nline three"), make_app("a2", avg_rating=4.1)]
    apps_path, ratings_path = write_dataset(apps, [])
    with open(apps_path, "r", encoding="utf-8") as f:
        text = f.read()
    with open(apps_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text.replace(",4.1,", ",9.9,"))

    # header on line 1, a1 on lines 2-4, a2 on line 5
    assert text.count("\n") == 5
    with pytest.raises(DatasetValidationError) as info:
        ingestion_service.load_dataset(apps_path, ratings_path)

    assert info.value.line == 5
    assert info.value.field == "avg_rating"


def test_skip_report_lines_follow_multiline_records(write_dataset, tmp_path):
    apps_path, _ = write_dataset([make_app("a1", readme_text="first\nsecond")], [])
    ratings_path = tmp_path / "ratings.csv"
    ratings_path.write_text('user_id,app_id,rating\n"u\n1",a1,1.0\nu2,x9,0.6\n', encoding="utf-8")

    dataset = ingestion_service.load_dataset(apps_path, str(ratings_path))

    assert [(s.reason, s.line) for s in dataset.skipped] == [("unknown_app", 4)]
