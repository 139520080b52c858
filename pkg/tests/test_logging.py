"""Pruebas del contexto sensor/fase de los registros."""

import logging

from utils.logging_utils import _ContextFilter, get_logger, setup_logging


def make_record():
    return logging.LogRecord("dkf", logging.INFO, __file__, 1, "mensaje", None, None)


def test_filter_fills_defaults():
    record = make_record()
    assert _ContextFilter().filter(record)
    assert (record.sensor, record.fase) == ("global", "general")


def test_filter_keeps_context():
    record = make_record()
    record.sensor, record.fase = "3", "dici"
    _ContextFilter().filter(record)
    assert (record.sensor, record.fase) == ("3", "dici")


def test_adapter_context():
    assert get_logger().extra == {"sensor": "global", "fase": "general"}
    adapter = get_logger(sensor=0, fase="fusion")
    assert adapter.extra == {"sensor": "0", "fase": "fusion"}
    assert adapter.logger.name == "dkf"


def test_adapter_reaches_handlers(caplog):
    with caplog.at_level(logging.INFO, logger="dkf"):
        get_logger(sensor=2, fase="prediccion").info("paso %d", 4)
    [record] = caplog.records
    assert record.getMessage() == "paso 4"
    assert record.sensor == "2"
    assert record.fase == "prediccion"


def test_setup_writes_sensor_and_phase(tmp_path, monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, "handlers", [])
    monkeypatch.setattr(root, "level", root.level)
    monkeypatch.setenv("LOG_DIR", str(tmp_path))
    monkeypatch.setenv("LOG_LEVEL", "debug")
    path = setup_logging()
    try:
        assert path == tmp_path / "dkf.log"
        assert len(root.handlers) == 2
        get_logger(sensor=1, fase="dici").debug("iteracion %d", 7)
        logging.getLogger("scipy").warning("externo")
        for handler in root.handlers:
            handler.flush()
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0].endswith("| DEBUG | Sensor: 1 | Fase: dici | iteracion 7")
        assert lines[1].endswith("| WARNING | Sensor: global | Fase: general | externo")
    finally:
        for handler in root.handlers:
            handler.close()


def test_setup_keeps_existing_handlers(tmp_path, monkeypatch):
    root = logging.getLogger()
    existing = logging.NullHandler()
    monkeypatch.setattr(root, "handlers", [existing])
    monkeypatch.setenv("LOG_DIR", str(tmp_path))
    assert setup_logging() == tmp_path / "dkf.log"
    assert root.handlers == [existing]
    assert not (tmp_path / "dkf.log").exists()
