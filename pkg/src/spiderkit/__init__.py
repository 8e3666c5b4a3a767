"""spiderkit: a small, polite web spider and scraping toolkit.

HTTP/1.0 codec and socket transport, robots.txt, conditional and ranged
fetches, form encoding, tolerant HTML tokenizing, per-host rate limiting,
a crawl/scrape engine, a passive-mode FTP client and local test fixtures.
"""

__version__ = "0.1.0"
