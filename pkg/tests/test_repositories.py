import json
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from recurrence.domain.errors import ConfigError  # noqa: E402
from recurrence.infrastructure.pool import process_pool  # noqa: E402
from recurrence.infrastructure.repositories import (  # noqa: E402
    FileReportRepository,
)


def test_writes_report_rows_and_timing(tmp_path):
    repo = FileReportRepository(tmp_path / 'out')
    repo.save_report('run', {'b': 1, 'a': [1, 2]})
    repo.save_rows(
        'run',
        ('system', 'x', 'frequency'),
        [{'frequency': '1/2', 'x': 0.5, 'system': 'golden', 'extra': 1}],
    )
    repo.save_timing('run', {'wall_clock_seconds': 0.1})
    report = (tmp_path / 'out' / 'run.json').read_text(encoding='utf-8')
    assert report.index('"a"') < report.index('"b"')
    assert json.loads(report) == {'a': [1, 2], 'b': 1}
    raw = (tmp_path / 'out' / 'run.csv').read_bytes()
    assert raw == b'system,x,frequency\r\ngolden,0.5,1/2\r\n'
    timing = json.loads((tmp_path / 'out' / 'run.timing.json').read_text())
    assert timing == {'wall_clock_seconds': 0.1}


def test_loads_bare_and_embedded_certificates(tmp_path):
    repo = FileReportRepository(tmp_path)
    certificate = {'K': 3, 'epsilon': 'ball:0.05'}
    bare = tmp_path / 'bare.json'
    bare.write_text(json.dumps(certificate), encoding='utf-8')
    embedded = tmp_path / 'report.json'
    embedded.write_text(
        json.dumps({'passed': True, 'certificate': certificate}),
        encoding='utf-8',
    )
    assert repo.load_certificate(str(bare)) == certificate
    assert repo.load_certificate(str(embedded)) == certificate


def test_certificate_refusals(tmp_path):
    repo = FileReportRepository(tmp_path)
    with pytest.raises(ConfigError):
        repo.load_certificate(str(tmp_path / 'absent.json'))
    broken = tmp_path / 'broken.json'
    broken.write_text('{"K": ', encoding='utf-8')
    with pytest.raises(ConfigError) as info:
        repo.load_certificate(str(broken))
    assert info.value.details['line'] == 1
    listed = tmp_path / 'list.json'
    listed.write_text('[1, 2]', encoding='utf-8')
    with pytest.raises(ConfigError):
        repo.load_certificate(str(listed))


def test_single_worker_pool_is_builtin_map():
    with process_pool(1) as mapper:
        assert mapper is map
        assert list(mapper(abs, [-1, 2, -3])) == [1, 2, 3]


def test_worker_pool_preserves_order():
    with process_pool(2) as mapper:
        assert list(mapper(abs, range(-20, 0))) == list(range(20, 0, -1))
