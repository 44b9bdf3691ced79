"""Country-level geolocation of tweets from tweet-inherent features."""

__version__ = "0.1.0"
