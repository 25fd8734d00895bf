def pytest_configure(config):
    # keep the marker known when this suite runs standalone; the root
    # conftest owns the summary reporting
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion this test decides")
