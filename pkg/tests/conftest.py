def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-horizon integration or full campaign tests")
    config.addinivalue_line("markers", "acceptance: acceptance-gate criteria")
