# vcod-bench tests
